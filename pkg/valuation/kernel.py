"""
Coalition kernels
Exponential kernels over transport distances, the binary-indicator baseline,
kernel matrix assembly and PSD verification.
"""

import logging
import math
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .datasets import Coalition, OwnerDataset, Task, aggregate, validate_owners
from .exceptions import EmptyCoalition, KernelError, NonSquare
from .transport import (
    LabelEmbedding, Reduction, SWParams, TransportSpace, build_label_embedding,
    class_distance_matrix, otdd_distance,
)


logger = logging.getLogger(__name__)


class KernelFamily(str, Enum):
    # exp(-gamma * SSW_2^(2 rho)), SSW_2 pooled over directions
    SSW_SQ_EXP = 'ssw_sq_exp'
    # exp(-gamma * SSW_1^rho)
    SSW_L1_EXP = 'ssw_l1_exp'
    # exp(-gamma * |b_A - b_B|^2) on owner indicator vectors
    BINARY_RBF = 'binary_rbf'
    # exp(-gamma * OTDD^(2 rho)), not guaranteed PSD
    OTDD_EXP = 'otdd_exp'


SSW_FAMILIES = (KernelFamily.SSW_SQ_EXP, KernelFamily.SSW_L1_EXP)


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily = KernelFamily.SSW_SQ_EXP
    gamma: float = 1.0
    sw: SWParams = field(default_factory=SWParams)
    eta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, 'family', KernelFamily(self.family))
        if not self.gamma > 0:
            raise KernelError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.eta <= 1:
            raise KernelError(f"eta must be in (0, 1], got {self.eta}")

    @property
    def distance_params(self) -> SWParams:
        if self.family is KernelFamily.SSW_SQ_EXP:
            # (mean W_2^2)^rho is conditionally negative definite for rho <= 1,
            # the per-slice mean of W_2 squared is not
            return replace(self.sw, p=2, reduction=Reduction.POOLED)
        if self.family is KernelFamily.SSW_L1_EXP:
            return self.sw.with_order(1)
        return self.sw

    @property
    def exponent(self) -> float:
        if self.family is KernelFamily.BINARY_RBF:
            return 1.0
        if self.family is KernelFamily.SSW_L1_EXP:
            return self.sw.rho
        return 2.0 * self.sw.rho

    @property
    def distance_key(self) -> Tuple:
        """Identifies the raw distance; gamma and rho only act on top of it."""
        if self.family is KernelFamily.BINARY_RBF:
            return (self.family.value,)
        params = self.distance_params
        base = (params.p, params.n_projections, params.seed, params.reduction.value)
        if self.family is KernelFamily.OTDD_EXP:
            return (self.family.value,) + base
        return ('ssw', self.eta) + base

    def with_gamma(self, gamma: float) -> 'KernelSpec':
        return replace(self, gamma=gamma)

    def describe(self) -> Dict:
        summary = {'family': self.family.value, 'gamma': self.gamma}
        if self.family is not KernelFamily.BINARY_RBF:
            summary.update({'rho': self.sw.rho, 'p': self.distance_params.p, 'projections': self.sw.n_projections})
        if self.family in SSW_FAMILIES:
            summary['eta'] = self.eta
        return summary


class CoalitionDistances:
    """
    Distance handle of one problem.
    Raw distances are memoized per unordered coalition pair and per distance
    key, so changing gamma or rho never pays the transport cost again.
    """

    def __init__(
        self,
        owners: Sequence[OwnerDataset],
        sw: Optional[SWParams] = None,
        embedding: Optional[LabelEmbedding] = None,
    ):
        validate_owners(owners)
        self.owners = list(owners)
        self.n_owners = len(self.owners)
        self.sw = sw or SWParams.from_settings()
        self._embedding = embedding
        self._label_distances = None
        self._spaces: Dict[Tuple, TransportSpace] = {}
        self._memo: Dict[Tuple, float] = {}
        self._lock = threading.Lock()
        self._build_lock = threading.RLock()
        self.computations = 0

    @property
    def task(self) -> Task:
        return self.owners[0].task

    @property
    def spaces(self) -> List[TransportSpace]:
        return list(self._spaces.values())

    @property
    def embedding(self) -> Optional[LabelEmbedding]:
        if self.task is not Task.CLASSIFICATION:
            return None
        with self._build_lock:
            if self._embedding is None:
                self._embedding = build_label_embedding(self.owners, self.sw)
        return self._embedding

    def label_distances(self) -> np.ndarray:
        with self._build_lock:
            if self._label_distances is None:
                self._label_distances = class_distance_matrix(self.owners, self.sw.with_order(1))
        return self._label_distances

    def space(self, eta: float, params: SWParams) -> TransportSpace:
        key = (eta, params.n_projections, params.seed)
        with self._build_lock:
            if key not in self._spaces:
                self._spaces[key] = TransportSpace(self.owners, params, eta=eta, embedding=self.embedding)
                logger.debug(f"Transport space for eta={eta} ready")
            return self._spaces[key]

    def prepare(self, specs: Sequence[KernelSpec], coalitions: Sequence[Coalition], executor=None) -> None:
        """
        Project ``coalitions`` into every transport space ``specs`` use, then
        freeze those caches: later reads are lock-free and a coalition outside
        ``coalitions`` raises ``CacheMiss``.
        """
        spaces = {}
        for spec in specs:
            if spec.family in SSW_FAMILIES:
                space = self.space(spec.eta, spec.sw)
                spaces[id(space)] = space
        for space in spaces.values():
            space.cache.project_all(coalitions, executor)
            space.cache.freeze()
        if spaces:
            logger.debug(f"Froze {len(spaces)} projection caches over {len(coalitions)} coalitions")

    def _compute(self, spec: KernelSpec, a: Coalition, b: Coalition) -> float:
        if spec.family is KernelFamily.BINARY_RBF:
            # squared Euclidean distance of 0/1 vectors = Hamming distance
            return float((a.members ^ b.members).bit_count())
        if spec.family is KernelFamily.OTDD_EXP:
            return otdd_distance(
                aggregate(self.owners, a), aggregate(self.owners, b),
                spec.distance_params, self.label_distances(),
            )
        return self.space(spec.eta, spec.sw).distance(a, b, spec.distance_params)

    def distance(self, spec: KernelSpec, a: Coalition, b: Coalition) -> float:
        if a.is_empty or b.is_empty:
            raise EmptyCoalition("the empty coalition has no distribution")
        if b < a:
            a, b = b, a
        key = (spec.distance_key, a.members, b.members)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        value = 0.0 if a == b else self._compute(spec, a, b)
        with self._lock:
            if key not in self._memo:
                self.computations += 1
                self._memo[key] = value
            return self._memo[key]


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    rows: Tuple[Coalition, ...]
    cols: Tuple[Coalition, ...]
    entries: np.ndarray

    @property
    def is_square(self) -> bool:
        return self.entries.ndim == 2 and self.entries.shape[0] == self.entries.shape[1]


def kernel_from_distances(spec: KernelSpec, distances) -> np.ndarray:
    return np.exp(-spec.gamma * np.power(distances, spec.exponent))


def kernel_value(spec: KernelSpec, a: Coalition, b: Coalition, distances: CoalitionDistances) -> float:
    return math.exp(-spec.gamma * distances.distance(spec, a, b) ** spec.exponent)


def distance_matrix(
    spec: KernelSpec,
    rows: Sequence[Coalition],
    cols: Sequence[Coalition],
    distances: CoalitionDistances,
    executor=None,
) -> np.ndarray:
    """Raw distances; each unordered pair is computed once."""
    rows, cols = tuple(rows), tuple(cols)
    pairs: List[Tuple[Coalition, Coalition]] = []
    seen = set()
    for a in rows:
        for b in cols:
            pair = (a, b) if a <= b else (b, a)
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)

    if executor is None:
        values = [distances.distance(spec, a, b) for a, b in pairs]
    else:
        values = list(executor.map(lambda pair: distances.distance(spec, *pair), pairs))
    lookup = dict(zip(pairs, values))

    matrix = np.empty((len(rows), len(cols)))
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            matrix[i, j] = lookup[(a, b) if a <= b else (b, a)]
    return matrix


def build_matrix(
    spec: KernelSpec,
    rows: Sequence[Coalition],
    cols: Sequence[Coalition],
    distances: CoalitionDistances,
    executor=None,
) -> KernelMatrix:
    rows, cols = tuple(rows), tuple(cols)
    entries = kernel_from_distances(spec, distance_matrix(spec, rows, cols, distances, executor))
    entries.setflags(write=False)
    return KernelMatrix(rows, cols, entries)


@dataclass(frozen=True)
class PSDReport:
    min_eigenvalue: float
    max_eigenvalue: float
    passed: bool


def psd_check(matrix, tolerance: float = 1e-8) -> PSDReport:
    """Pass iff the smallest eigenvalue is >= -tolerance * max(1, largest eigenvalue)."""
    if isinstance(matrix, KernelMatrix):
        if matrix.rows != matrix.cols:
            raise NonSquare("kernel matrix rows and columns are different coalition lists")
        matrix = matrix.entries
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {matrix.shape}")

    eigenvalues = linalg.eigvalsh((matrix + matrix.T) / 2)
    smallest, largest = float(eigenvalues[0]), float(eigenvalues[-1])
    passed = smallest >= -tolerance * max(1.0, largest)
    if not passed:
        logger.warning(f"Kernel matrix is not PSD: min eigenvalue {smallest:.3e}, max {largest:.3e}")
    return PSDReport(smallest, largest, passed)
