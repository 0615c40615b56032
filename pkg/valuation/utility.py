"""
Utility functions
Desk-scale surrogate trainers scored on a held-out set, plus lookup tables for
synthetic games. Evaluations are memoized in the ledger.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import softmax
from sklearn.linear_model import Ridge
from sklearn.neighbors import KNeighborsClassifier

from .datasets import AggregatedDataset, Coalition, OwnerDataset, Task, aggregate
from .exceptions import (
    ConfigError, ConstantTarget, EmptyCoalition, TaskMismatch, UtilityError,
    UtilityTableMiss,
)
from .semivalue import EvaluationLedger, Source


logger = logging.getLogger(__name__)


class UtilityKind(str, Enum):
    KNN = 'knn_accuracy'
    RIDGE = 'ridge_r2'
    LOGISTIC = 'logistic_accuracy'
    TABLE = 'table'


@dataclass(frozen=True, eq=False)
class UtilityFn:
    kind: UtilityKind
    validation: Optional[AggregatedDataset] = None
    k: int = 5
    lam: float = 1e-3
    steps: int = 500
    lr: float = 0.1
    table: Optional[Mapping[int, float]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'kind', UtilityKind(self.kind))
        if self.kind is UtilityKind.TABLE:
            if self.table is None:
                raise ConfigError("table utility needs a table")
            object.__setattr__(self, 'table', {int(key): float(value) for key, value in self.table.items()})
        elif self.validation is None:
            raise ConfigError(f"{self.kind.value} utility needs a validation set")
        if self.k < 1 or self.lam < 0 or self.steps < 1 or self.lr <= 0:
            raise ConfigError(f"invalid parameters for {self.kind.value} utility")

    @classmethod
    def parse(cls, text: str, validation: Optional[AggregatedDataset] = None, seed: int = 0) -> 'UtilityFn':
        """Build from ``knn:k``, ``ridge:lambda``, ``logistic[:steps[:lr]]`` or ``table:path``."""
        name, _, argument = text.partition(':')
        try:
            if name == 'knn':
                return cls(UtilityKind.KNN, validation, k=int(argument or 5), seed=seed)
            if name == 'ridge':
                return cls(UtilityKind.RIDGE, validation, lam=float(argument or 1e-3), seed=seed)
            if name == 'logistic':
                steps, _, lr = argument.partition(':')
                return cls(UtilityKind.LOGISTIC, validation, steps=int(steps or 500), lr=float(lr or 0.1), seed=seed)
        except ValueError as exc:
            raise ConfigError(f"cannot parse utility '{text}': {exc}") from exc
        if name == 'table':
            if not argument:
                raise ConfigError("table utility needs a path: table:<file>")
            return cls.from_table(load_table(argument), seed=seed)
        raise ConfigError(f"unknown utility '{text}', expected knn:k, ridge:lambda, logistic or table:path")

    @classmethod
    def from_table(cls, table: Mapping, seed: int = 0) -> 'UtilityFn':
        return cls(UtilityKind.TABLE, table=table, seed=seed)

    def describe(self) -> str:
        if self.kind is UtilityKind.KNN:
            return f"knn:{self.k}"
        if self.kind is UtilityKind.RIDGE:
            return f"ridge:{self.lam:g}"
        if self.kind is UtilityKind.LOGISTIC:
            return f"logistic:{self.steps}:{self.lr:g}"
        return f"table({len(self.table)} coalitions)"


def load_table(path) -> dict:
    """JSON object mapping coalition bit-patterns (decimal strings) to utilities."""
    try:
        raw = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read utility table {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"utility table {path} must be a JSON object")
    try:
        return {int(key): float(value) for key, value in raw.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"utility table {path}: {exc}") from exc


def r2_score(y_true, y_pred) -> float:
    """1 - SS_res / SS_tot."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise UtilityError(f"R2 needs two vectors of equal length, got {y_true.shape} and {y_pred.shape}")
    if y_true.shape[0] < 2:
        raise UtilityError("R2 needs at least two points")
    total = np.sum((y_true - y_true.mean()) ** 2)
    if total == 0:
        raise ConstantTarget()
    return float(1.0 - np.sum((y_true - y_pred) ** 2) / total)


@dataclass(frozen=True)
class UtilityScore:
    value: float
    degenerate: bool = False


def _majority_floor(train: AggregatedDataset, validation: AggregatedDataset) -> UtilityScore:
    majority = np.bincount(train.targets).argmax()
    return UtilityScore(float(np.mean(validation.targets == majority)), degenerate=True)


def _require(task: Task, data: AggregatedDataset, kind: UtilityKind) -> None:
    if data.task is not task:
        raise TaskMismatch(f"{kind.value} needs {task.value} data, got {data.task.value}")


def _knn_accuracy(fn: UtilityFn, train: AggregatedDataset) -> UtilityScore:
    _require(Task.CLASSIFICATION, train, fn.kind)
    if np.unique(train.targets).size < 2:
        logger.warning(f"Coalition {train.source} holds a single class, using the majority floor")
        return _majority_floor(train, fn.validation)
    model = KNeighborsClassifier(n_neighbors=min(fn.k, train.n_rows))
    model.fit(train.features, train.targets)
    return UtilityScore(float(model.score(fn.validation.features, fn.validation.targets)))


def _ridge_r2(fn: UtilityFn, train: AggregatedDataset) -> UtilityScore:
    _require(Task.REGRESSION, train, fn.kind)
    model = Ridge(alpha=fn.lam, solver='cholesky')
    model.fit(train.features, train.targets)
    predicted = model.predict(fn.validation.features)
    truth = fn.validation.targets
    if truth.ndim == 1:
        return UtilityScore(r2_score(truth, predicted))
    return UtilityScore(float(np.mean([r2_score(truth[:, j], predicted[:, j]) for j in range(truth.shape[1])])))


def _logistic_accuracy(fn: UtilityFn, train: AggregatedDataset) -> UtilityScore:
    """Softmax regression by fixed-step full-batch gradient descent from zero weights."""
    _require(Task.CLASSIFICATION, train, fn.kind)
    if np.unique(train.targets).size < 2:
        logger.warning(f"Coalition {train.source} holds a single class, using the majority floor")
        return _majority_floor(train, fn.validation)

    n_classes = int(max(train.targets.max(), fn.validation.targets.max())) + 1
    design = np.hstack([train.features, np.ones((train.n_rows, 1))])
    onehot = np.eye(n_classes)[train.targets]
    weights = np.zeros((design.shape[1], n_classes))
    for _ in range(fn.steps):
        probabilities = softmax(design @ weights, axis=1)
        weights -= fn.lr * design.T @ (probabilities - onehot) / train.n_rows

    held_out = np.hstack([fn.validation.features, np.ones((fn.validation.n_rows, 1))])
    predicted = np.argmax(held_out @ weights, axis=1)
    return UtilityScore(float(np.mean(predicted == fn.validation.targets)))


TRAINERS = {
    UtilityKind.KNN: _knn_accuracy,
    UtilityKind.RIDGE: _ridge_r2,
    UtilityKind.LOGISTIC: _logistic_accuracy,
}


def train_and_score(fn: UtilityFn, coalition: Coalition, owners: Sequence[OwnerDataset]) -> UtilityScore:
    if coalition.is_empty:
        raise EmptyCoalition("utilities are only evaluated on non-empty coalitions")
    if fn.kind is UtilityKind.TABLE:
        try:
            return UtilityScore(fn.table[coalition.members])
        except KeyError:
            raise UtilityTableMiss(coalition) from None
    return TRAINERS[fn.kind](fn, aggregate(owners, coalition))


def evaluate(
    fn: UtilityFn,
    coalition: Coalition,
    owners: Sequence[OwnerDataset],
    ledger: Optional[EvaluationLedger] = None,
) -> float:
    """Utility of one coalition; with a ledger, each coalition is trained at most once."""
    if coalition.is_empty:
        raise EmptyCoalition("utilities are only evaluated on non-empty coalitions")
    if ledger is not None:
        entry = ledger.get(coalition)
        if entry is not None and entry.source is Source.ACTUAL:
            return entry.utility
    score = train_and_score(fn, coalition, owners)
    if ledger is None:
        return score.value
    return ledger.record_actual(coalition, score.value, degenerate=score.degenerate).utility


def evaluate_all(
    fn: UtilityFn,
    coalitions: Sequence[Coalition],
    owners: Sequence[OwnerDataset],
    ledger: EvaluationLedger,
    executor=None,
) -> np.ndarray:
    """Train in parallel, record in input order so the ledger order is reproducible."""
    coalitions = list(coalitions)
    for coalition in coalitions:
        if coalition.is_empty:
            raise EmptyCoalition("utilities are only evaluated on non-empty coalitions")
    pending = []
    for coalition in dict.fromkeys(coalitions):
        entry = ledger.get(coalition)
        if entry is None or entry.source is not Source.ACTUAL:
            pending.append(coalition)

    if executor is None:
        scores = [train_and_score(fn, c, owners) for c in pending]
    else:
        scores = list(executor.map(lambda c: train_and_score(fn, c, owners), pending))
    for coalition, score in zip(pending, scores):
        ledger.record_actual(coalition, score.value, degenerate=score.degenerate)
    logger.info(f"Evaluated {len(pending)} coalitions with {fn.describe()}")
    return np.array([ledger.utility(c) for c in coalitions], dtype=np.float64)
