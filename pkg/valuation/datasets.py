"""
Owner datasets
Coalitions, aggregation of owner data, CSV ingestion and synthetic generators
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn import datasets as sk_datasets
from sklearn.model_selection import train_test_split

from .exceptions import (
    DatasetError, EmptyCoalition, HeterogeneousSchema, MissingOwner,
    ParseError, UnknownClass,
)


logger = logging.getLogger(__name__)

# one machine word per coalition
MAX_OWNERS = 64


class Task(str, Enum):
    REGRESSION = 'regression'
    CLASSIFICATION = 'classification'


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, order='C')
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class OwnerDataset:
    """One owner's data: feature matrix (rows = points) and targets."""

    owner_id: int
    features: np.ndarray
    targets: np.ndarray
    task: Task = Task.CLASSIFICATION

    def __post_init__(self):
        task = Task(self.task)
        features = _frozen(self.features, np.float64)
        if features.ndim != 2:
            raise DatasetError(f"owner {self.owner_id}: features must be a matrix, got {features.ndim}-d")
        if task is Task.CLASSIFICATION:
            targets = _frozen(self.targets, np.int64)
            if targets.ndim != 1:
                raise DatasetError(f"owner {self.owner_id}: class labels must be a vector")
            if targets.size and targets.min() < 0:
                raise DatasetError(f"owner {self.owner_id}: class labels must be non-negative")
        else:
            targets = _frozen(self.targets, np.float64)
            if targets.ndim not in (1, 2):
                raise DatasetError(f"owner {self.owner_id}: regression targets must be a vector or matrix")
        if features.shape[0] < 1:
            raise DatasetError(f"owner {self.owner_id}: dataset is empty")
        if features.shape[0] != targets.shape[0]:
            raise DatasetError(
                f"owner {self.owner_id}: {features.shape[0]} feature rows but {targets.shape[0]} targets"
            )
        object.__setattr__(self, 'task', task)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'targets', targets)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, order=True)
class Coalition:
    """A set of owners stored as a bit pattern (bit i set = owner i is a member)."""

    members: int = 0

    def __post_init__(self):
        if not 0 <= self.members < (1 << MAX_OWNERS):
            raise DatasetError(f"coalition pattern {self.members} is outside 0..2^{MAX_OWNERS}-1")

    @classmethod
    def of(cls, owners: Iterable[int]) -> 'Coalition':
        members = 0
        for owner in owners:
            if not 0 <= owner < MAX_OWNERS:
                raise DatasetError(f"owner index {owner} is outside 0..{MAX_OWNERS - 1}")
            members |= 1 << owner
        return cls(members)

    @classmethod
    def grand(cls, n_owners: int) -> 'Coalition':
        return cls((1 << n_owners) - 1)

    @classmethod
    def from_key(cls, key) -> 'Coalition':
        return cls(int(key))

    @property
    def size(self) -> int:
        return self.members.bit_count()

    @property
    def is_empty(self) -> bool:
        return self.members == 0

    @property
    def owners(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.members.bit_length()) if self.members >> i & 1)

    @property
    def key(self) -> str:
        return str(self.members)

    def __contains__(self, owner: int) -> bool:
        return bool(self.members >> owner & 1)

    def with_owner(self, owner: int) -> 'Coalition':
        return Coalition(self.members | (1 << owner))

    def without(self, owner: int) -> 'Coalition':
        return Coalition(self.members & ~(1 << owner))

    def indicator(self, n_owners: int) -> np.ndarray:
        return np.array([self.members >> i & 1 for i in range(n_owners)], dtype=np.float64)

    def __str__(self):
        return '{' + ','.join(str(i) for i in self.owners) + '}'


@dataclass(frozen=True, eq=False)
class AggregatedDataset:
    """Pooled data D_C of a coalition, rows stacked in ascending owner order."""

    features: np.ndarray
    targets: np.ndarray
    source: Coalition
    task: Task

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def validate_owners(owners: Sequence[OwnerDataset]) -> None:
    """All owners of one problem share the feature dimension, task and target shape."""
    if not owners:
        raise DatasetError("no owner datasets")
    if len(owners) > MAX_OWNERS:
        raise DatasetError(f"{len(owners)} owners, at most {MAX_OWNERS} are supported")
    ids = [owner.owner_id for owner in owners]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"duplicate owner ids in {ids}")
    first = owners[0]
    for owner in owners[1:]:
        if owner.n_features != first.n_features:
            raise HeterogeneousSchema(
                f"owner {owner.owner_id} has {owner.n_features} features, owner {first.owner_id} has {first.n_features}"
            )
        if owner.task is not first.task:
            raise HeterogeneousSchema(f"owner {owner.owner_id} is {owner.task.value}, expected {first.task.value}")
        if owner.targets.shape[1:] != first.targets.shape[1:]:
            raise HeterogeneousSchema(f"owner {owner.owner_id} has a different target shape")


def n_classes(owners: Sequence[OwnerDataset]) -> int:
    return int(max(owner.targets.max() for owner in owners)) + 1


def aggregate(owners: Sequence[OwnerDataset], coalition: Coalition) -> AggregatedDataset:
    """Stack the datasets of the coalition's members in ascending owner order."""
    if coalition.is_empty:
        raise EmptyCoalition()
    by_id = {owner.owner_id: owner for owner in owners}
    members = []
    for owner_id in coalition.owners:
        try:
            members.append(by_id[owner_id])
        except KeyError:
            raise MissingOwner(owner_id) from None

    if len(members) == 1:
        return AggregatedDataset(members[0].features, members[0].targets, coalition, members[0].task)

    features = np.concatenate([member.features for member in members], axis=0)
    targets = np.concatenate([member.targets for member in members], axis=0)
    features.setflags(write=False)
    targets.setflags(write=False)
    return AggregatedDataset(features, targets, coalition, members[0].task)


# CSV ingestion

@dataclass(frozen=True)
class CsvImport:
    owners: List[OwnerDataset]
    feature_columns: Tuple[str, ...]
    # original label -> dense class index (classification only)
    label_mapping: Optional[Dict[str, int]] = None
    # owner id -> value found in the owner column
    owner_mapping: Dict[int, str] = field(default_factory=dict)


def _dense_order(values: Iterable[str]) -> List[str]:
    """Distinct values, numerically sorted when they all parse as numbers."""
    distinct = list(dict.fromkeys(values))
    numeric = pd.to_numeric(pd.Series(distinct, dtype=object), errors='coerce')
    if not numeric.isna().any():
        return [value for _, value in sorted(zip(numeric.tolist(), distinct))]
    return sorted(distinct)


def _first_bad_line(mask) -> int:
    # header is line 1
    return int(np.flatnonzero(np.asarray(mask))[0]) + 2


def _check_row_widths(path) -> None:
    """Every record must have as many cells as the header; blank lines are skipped."""
    with open(path, newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        header = next((row for row in reader if row), None)
        if header is None:
            return
        for row in reader:
            if row and len(row) != len(header):
                raise HeterogeneousSchema(
                    f"{path}: {len(row)} cells under a header of {len(header)}", line=reader.line_num
                )


def load_csv(path, target_column: str, task, owner_column: str) -> CsvImport:
    """Read a headed CSV into one OwnerDataset per distinct owner value."""
    task = Task(task)
    try:
        _check_row_widths(path)
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, index_col=False)
    except pd.errors.ParserError as exc:
        raise HeterogeneousSchema(f"{path}: {exc}") from exc
    except (OSError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc

    for column in (target_column, owner_column):
        if column not in frame.columns:
            raise ParseError(f"{path}: column '{column}' not in header {list(frame.columns)}")
    feature_columns = tuple(c for c in frame.columns if c not in (target_column, owner_column))
    if not feature_columns:
        raise ParseError(f"{path}: no feature columns")

    features = frame[list(feature_columns)].apply(pd.to_numeric, errors='coerce')
    missing = features.isna().any(axis=1)
    if missing.any():
        raise ParseError("missing or non-numeric feature value", line=_first_bad_line(missing))
    infinite = ~np.isfinite(features.to_numpy(dtype=np.float64)).all(axis=1)
    if infinite.any():
        raise ParseError("infinite feature value", line=_first_bad_line(infinite))

    raw_owner = frame[owner_column].fillna('').astype(str)
    raw_target = frame[target_column].fillna('').astype(str)
    for name, column in ((owner_column, raw_owner), (target_column, raw_target)):
        empty = column.str.strip() == ''
        if empty.any():
            raise ParseError(f"empty '{name}' cell", line=_first_bad_line(empty))

    label_mapping = None
    if task is Task.CLASSIFICATION:
        label_mapping = {label: index for index, label in enumerate(_dense_order(raw_target))}
        targets = raw_target.map(label_mapping).to_numpy(dtype=np.int64)
    else:
        parsed = pd.to_numeric(raw_target, errors='coerce')
        invalid = ~np.isfinite(parsed.to_numpy(dtype=np.float64))
        if invalid.any():
            raise ParseError("non-numeric or infinite regression target", line=_first_bad_line(invalid))
        targets = parsed.to_numpy(dtype=np.float64)

    matrix = features.to_numpy(dtype=np.float64)
    owners = []
    owner_mapping = {}
    for owner_id, value in enumerate(_dense_order(raw_owner)):
        rows = (raw_owner == value).to_numpy()
        owners.append(OwnerDataset(owner_id, matrix[rows], targets[rows], task))
        owner_mapping[owner_id] = value

    logger.info(f"Loaded {len(frame)} rows for {len(owners)} owners from {path}")
    return CsvImport(owners, feature_columns, label_mapping, owner_mapping)


def write_csv(
    owners: Sequence[OwnerDataset],
    path,
    target_column: str = 'target',
    owner_column: str = 'owner',
    label_mapping: Optional[Dict[str, int]] = None,
) -> Path:
    """Write owners as one headed CSV; labels are written back through ``label_mapping``."""
    validate_owners(owners)
    decode = {index: label for label, index in (label_mapping or {}).items()}
    frames = []
    for owner in owners:
        frame = pd.DataFrame(owner.features, columns=[f"x{j}" for j in range(owner.n_features)])
        if owner.targets.ndim == 2:
            for j in range(owner.targets.shape[1]):
                frame[f"{target_column}{j}"] = owner.targets[:, j]
        elif decode:
            frame[target_column] = [decode[int(label)] for label in owner.targets]
        else:
            frame[target_column] = owner.targets
        frame[owner_column] = owner.owner_id
        frames.append(frame)
    path = Path(path)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    return path


# synthetic generators

def make_moons(n_owners: int, points_per_owner: int, noise: float = 0.0, seed: int = 0) -> List[OwnerDataset]:
    """Two interleaved half circles, shuffled and dealt out to owners in equal chunks."""
    if n_owners < 1 or points_per_owner < 1:
        raise DatasetError("owner and point counts must be at least 1")
    if noise < 0:
        raise DatasetError(f"noise must be non-negative, got {noise}")
    features, labels = sk_datasets.make_moons(
        n_samples=n_owners * points_per_owner, noise=noise, shuffle=True, random_state=seed
    )
    return [
        OwnerDataset(
            owner_id,
            features[owner_id * points_per_owner:(owner_id + 1) * points_per_owner],
            labels[owner_id * points_per_owner:(owner_id + 1) * points_per_owner],
            Task.CLASSIFICATION,
        )
        for owner_id in range(n_owners)
    ]


def make_blobs(
    n_owners: int,
    class_centers,
    spread: float,
    assignment: Sequence[Sequence[int]],
    points_per_owner: int,
    seed: int = 0,
) -> List[OwnerDataset]:
    """Gaussian blobs, one per class; each owner draws only from its assigned classes."""
    centers = np.atleast_2d(np.asarray(class_centers, dtype=np.float64))
    if n_owners < 1 or points_per_owner < 1:
        raise DatasetError("owner and point counts must be at least 1")
    if len(assignment) != n_owners:
        raise DatasetError(f"{len(assignment)} class assignments for {n_owners} owners")
    if spread < 0:
        raise DatasetError(f"spread must be non-negative, got {spread}")

    random_state = np.random.RandomState(seed)
    owners = []
    for owner_id, classes in enumerate(assignment):
        classes = sorted(set(int(c) for c in classes))
        if not classes:
            raise UnknownClass(f"owner {owner_id} has no assigned class")
        unknown = [c for c in classes if not 0 <= c < len(centers)]
        if unknown:
            raise UnknownClass(f"owner {owner_id}: classes {unknown} have no center")
        features, local = sk_datasets.make_blobs(
            n_samples=points_per_owner,
            centers=centers[classes],
            cluster_std=spread,
            shuffle=True,
            random_state=random_state,
        )
        owners.append(OwnerDataset(owner_id, features, np.asarray(classes)[local], Task.CLASSIFICATION))
    return owners


def split_validation(
    owners: Sequence[OwnerDataset], fraction: float, seed: int = 0
) -> Tuple[List[OwnerDataset], AggregatedDataset]:
    """Hold out ``fraction`` of every owner's rows (owners keep at least one row)."""
    if not 0 < fraction < 1:
        raise DatasetError(f"validation fraction must be in (0, 1), got {fraction}")
    validate_owners(owners)
    kept, held_features, held_targets = [], [], []
    for owner in owners:
        if owner.n_rows < 2:
            kept.append(owner)
            continue
        train_rows, test_rows = train_test_split(
            np.arange(owner.n_rows), test_size=fraction, random_state=seed + owner.owner_id
        )
        train_rows, test_rows = np.sort(train_rows), np.sort(test_rows)
        kept.append(OwnerDataset(owner.owner_id, owner.features[train_rows], owner.targets[train_rows], owner.task))
        held_features.append(owner.features[test_rows])
        held_targets.append(owner.targets[test_rows])
    if not held_features:
        raise DatasetError("no owner has enough rows to hold out a validation set")

    features = np.concatenate(held_features)
    targets = np.concatenate(held_targets)
    features.setflags(write=False)
    targets.setflags(write=False)
    validation = AggregatedDataset(features, targets, Coalition.of(o.owner_id for o in owners), owners[0].task)
    return kept, validation
