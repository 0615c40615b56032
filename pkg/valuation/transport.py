"""
Transport distances between coalition datasets

Sliced Wasserstein over shared random directions (sorted projections are
cached per coalition, only the 1-D quantile integral runs per pair), the
supervised transform G_eta with an MDS label embedding, and the OTDD
baseline solved as an exact OT problem.
"""

import logging
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import ot
from ot.sliced import get_random_projections
from scipy import linalg
from scipy.spatial.distance import cdist, pdist, squareform

from .conf import valuation_settings
from .datasets import (
    AggregatedDataset, Coalition, OwnerDataset, Task, aggregate, n_classes,
    validate_owners,
)
from .exceptions import (
    CacheMiss, DimensionMismatch, EmptyDistribution, MissingClass,
    MissingEmbedding, ProblemTooLarge, RegressionUnsupported, TransportError,
)


logger = logging.getLogger(__name__)


class Reduction(str, Enum):
    # mean over directions of the per-direction W_p
    PER_SLICE = 'per_slice'
    # (mean over directions of W_p^p)^(1/p)
    POOLED = 'pooled'


@dataclass(frozen=True)
class SWParams:
    p: int = 2
    rho: float = 1.0
    n_projections: int = 100
    seed: int = 0
    reduction: Reduction = Reduction.PER_SLICE

    def __post_init__(self):
        if self.p not in (1, 2):
            raise TransportError(f"SW order must be 1 or 2, got {self.p}")
        if not 0 < self.rho <= 1:
            raise TransportError(f"rho must be in (0, 1], got {self.rho}")
        if self.n_projections < 1:
            raise TransportError(f"need at least one projection, got {self.n_projections}")
        object.__setattr__(self, 'reduction', Reduction(self.reduction))

    @classmethod
    def from_settings(cls, **overrides) -> 'SWParams':
        values = {
            'p': valuation_settings.SW_ORDER,
            'n_projections': valuation_settings.PROJECTIONS,
            'reduction': valuation_settings.SW_REDUCTION,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def with_order(self, p: int) -> 'SWParams':
        return replace(self, p=p)


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    """L unit directions in R^d, columns of ``directions`` (shape d x L)."""

    directions: np.ndarray
    seed: int

    @classmethod
    def sample(cls, dim: int, n_projections: int, seed: int) -> 'ProjectionSet':
        directions = get_random_projections(dim, n_projections, seed=np.random.RandomState(seed))
        directions = np.ascontiguousarray(directions, dtype=np.float64)
        directions.setflags(write=False)
        return cls(directions, seed)

    @property
    def dim(self) -> int:
        return self.directions.shape[0]

    @property
    def n_projections(self) -> int:
        return self.directions.shape[1]


def sort_projections(points: np.ndarray, projections: ProjectionSet) -> np.ndarray:
    """Project every point on every direction and sort each column (shape rows x L)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != projections.dim:
        raise DimensionMismatch(f"points of shape {points.shape} against directions in R^{projections.dim}")
    if points.shape[0] == 0:
        raise EmptyDistribution()
    projected = np.sort(points @ projections.directions, axis=0)
    projected.setflags(write=False)
    return projected


class ProjectionCache:
    """
    Sorted projections per coalition.
    Filled once (insert-if-absent under a lock), then frozen and read concurrently.
    """

    def __init__(self, projections: ProjectionSet, points: Callable[[Coalition], np.ndarray]):
        self.projections = projections
        self._points = points
        self._sorted: Dict[Coalition, np.ndarray] = {}
        self._lock = threading.Lock()
        self._frozen = False

    def __contains__(self, coalition) -> bool:
        return coalition in self._sorted

    def __len__(self) -> int:
        return len(self._sorted)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def project(self, coalition: Coalition) -> np.ndarray:
        cached = self._sorted.get(coalition)
        if cached is not None:
            return cached
        if self._frozen:
            raise CacheMiss(coalition)
        projected = sort_projections(self._points(coalition), self.projections)
        with self._lock:
            return self._sorted.setdefault(coalition, projected)

    def project_all(self, coalitions: Iterable[Coalition], executor=None) -> None:
        pending = [c for c in dict.fromkeys(coalitions) if c not in self._sorted]
        if executor is None:
            for coalition in pending:
                self.project(coalition)
        else:
            list(executor.map(self.project, pending))
        logger.debug(f"Projection cache holds {len(self._sorted)} coalitions")

    def sorted_projections(self, coalition: Coalition) -> np.ndarray:
        try:
            return self._sorted[coalition]
        except KeyError:
            raise CacheMiss(coalition) from None

    def freeze(self) -> None:
        self._frozen = True


def wasserstein_1d(a, b, p: int = 1) -> float:
    """Exact W_p between two sorted, uniformly weighted 1-D samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyDistribution()
    cost = float(ot.wasserstein_1d(a, b, p=p, require_sort=False))
    return cost ** (1.0 / p)


def _reduce_slices(costs: np.ndarray, params: SWParams) -> float:
    # costs are per-direction W_p^p
    if params.reduction is Reduction.PER_SLICE:
        return float(np.mean(costs ** (1.0 / params.p)))
    return float(np.mean(costs) ** (1.0 / params.p))


def _sorted_sw(sorted_a: np.ndarray, sorted_b: np.ndarray, params: SWParams) -> float:
    if sorted_a.shape[1] != sorted_b.shape[1]:
        raise DimensionMismatch("projections taken over different direction sets")
    costs = ot.wasserstein_1d(sorted_a, sorted_b, p=params.p, require_sort=False)
    return _reduce_slices(np.asarray(costs, dtype=np.float64), params)


def sliced_wasserstein(a: Coalition, b: Coalition, params: SWParams, cache: ProjectionCache) -> float:
    """SW between two cached coalitions; only the quantile integral is computed here."""
    return _sorted_sw(cache.sorted_projections(a), cache.sorted_projections(b), params)


def sliced_wasserstein_points(points_a, points_b, projections: ProjectionSet, params: SWParams) -> float:
    """Cache-free SW between two point clouds."""
    return _sorted_sw(sort_projections(points_a, projections), sort_projections(points_b, projections), params)


# label embedding

@dataclass(frozen=True, eq=False)
class LabelEmbedding:
    # row j is e(y^j)
    vectors: np.ndarray
    class_distances: np.ndarray
    stress: float

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]


def class_distance_matrix(owners: Sequence[OwnerDataset], params: SWParams) -> np.ndarray:
    """SW between the per-class feature distributions pooled over all owners."""
    validate_owners(owners)
    if owners[0].task is not Task.CLASSIFICATION:
        raise RegressionUnsupported("class distances need classification labels")
    pooled = aggregate(owners, Coalition.of(owner.owner_id for owner in owners))
    projections = ProjectionSet.sample(pooled.n_features, params.n_projections, params.seed)

    sorted_classes = []
    for label in range(n_classes(owners)):
        rows = pooled.features[pooled.targets == label]
        if rows.shape[0] == 0:
            raise MissingClass(f"class {label} does not appear in any owner's data")
        sorted_classes.append(sort_projections(rows, projections))

    k = len(sorted_classes)
    distances = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            distances[i, j] = distances[j, i] = _sorted_sw(sorted_classes[i], sorted_classes[j], params)
    return distances


def classical_mds(distances, dim: int) -> Tuple[np.ndarray, float]:
    """
    Classical (Torgerson) MDS: double-centre the squared distances and keep
    the top ``dim`` eigenpairs, negative eigenvalues truncated to zero.
    Returns the coordinates and the normalised stress of the embedding.
    """
    distances = np.asarray(distances, dtype=np.float64)
    k = distances.shape[0]
    centering = np.eye(k) - np.full((k, k), 1.0 / k)
    gram = -0.5 * centering @ (distances ** 2) @ centering
    gram = (gram + gram.T) / 2

    eigenvalues, eigenvectors = linalg.eigh(gram)
    order = np.argsort(eigenvalues)[::-1][:dim]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]
    if np.any(eigenvalues < 0):
        logger.warning(f"MDS truncated {int(np.sum(eigenvalues < 0))} negative eigenvalues")
    coordinates = eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))

    embedded = squareform(pdist(coordinates)) if dim > 0 else np.zeros((k, k))
    total = np.sum(distances ** 2)
    stress = float(np.sqrt(np.sum((distances - embedded) ** 2) / total)) if total > 0 else 0.0
    return coordinates, stress


def build_label_embedding(
    owners: Sequence[OwnerDataset], params: SWParams, dim: Optional[int] = None
) -> LabelEmbedding:
    k = n_classes(owners)
    if k == 1:
        logger.warning("Single class problem, labels embed to the zero vector")
        return LabelEmbedding(np.zeros((1, 0)), np.zeros((1, 1)), 0.0)

    if dim is None:
        dim = min(k - 1, valuation_settings.MDS_MAX_DIM)
    if not 1 <= dim <= k - 1:
        raise TransportError(f"embedding dimension must be in 1..{k - 1}, got {dim}")

    distances = class_distance_matrix(owners, params)
    vectors, stress = classical_mds(distances, dim)
    vectors.setflags(write=False)
    logger.info(f"Embedded {k} classes in {dim} dimensions, stress {stress:.2e}")
    return LabelEmbedding(vectors, distances, stress)


def g_eta_transform(data: AggregatedDataset, eta: float, embedding: Optional[LabelEmbedding] = None) -> np.ndarray:
    """eta * X  (+)  (1 - eta) * y, with y replaced by e(y) for classification."""
    if not 0 < eta <= 1:
        raise TransportError(f"eta must be in (0, 1], got {eta}")
    if data.task is Task.CLASSIFICATION:
        if embedding is None:
            raise MissingEmbedding()
        if data.targets.max() >= embedding.n_classes:
            raise MissingClass(f"label {int(data.targets.max())} is outside the embedding")
        targets = embedding.vectors[data.targets]
    else:
        if embedding is not None:
            raise TransportError("regression targets are used as-is, not embedded")
        targets = data.targets.reshape(data.n_rows, -1)
    return np.hstack([eta * data.features, (1.0 - eta) * targets])


def target_dim(owners: Sequence[OwnerDataset], embedding: Optional[LabelEmbedding]) -> int:
    if owners[0].task is Task.CLASSIFICATION:
        if embedding is None:
            raise MissingEmbedding()
        return embedding.dim
    targets = owners[0].targets
    return 1 if targets.ndim == 1 else targets.shape[1]


class TransportSpace:
    """
    The shared directions and projection cache of one problem under one
    transform: raw features when ``eta`` is None, G_eta otherwise.
    Every pairwise distance in the space uses the same directions.
    """

    def __init__(
        self,
        owners: Sequence[OwnerDataset],
        params: SWParams,
        eta: Optional[float] = None,
        embedding: Optional[LabelEmbedding] = None,
    ):
        validate_owners(owners)
        self.owners = list(owners)
        self.params = params
        self.eta = eta
        self.embedding = embedding
        dim = self.owners[0].n_features
        if eta is not None:
            dim += target_dim(self.owners, embedding)
        self.cache = ProjectionCache(ProjectionSet.sample(dim, params.n_projections, params.seed), self.points)

    def points(self, coalition: Coalition) -> np.ndarray:
        data = aggregate(self.owners, coalition)
        if self.eta is None:
            return data.features
        return g_eta_transform(data, self.eta, self.embedding)

    def distance(self, a: Coalition, b: Coalition, params: Optional[SWParams] = None) -> float:
        self.cache.project(a)
        self.cache.project(b)
        return sliced_wasserstein(a, b, params or self.params, self.cache)


def ssw_distance(a: Coalition, b: Coalition, space: TransportSpace, params: Optional[SWParams] = None) -> float:
    """Supervised SW: SW between G_eta(D_A) and G_eta(D_B) in a supervised space."""
    if space.eta is None:
        raise TransportError("ssw_distance needs a space built with an eta")
    return space.distance(a, b, params)


def otdd_distance(
    a: AggregatedDataset,
    b: AggregatedDataset,
    params: SWParams,
    label_distances: np.ndarray,
    max_points: Optional[int] = None,
) -> float:
    """
    OT dataset distance with ground cost (|x - x'|^p + d(y, y')^p)^(1/p),
    where d(y, y') is the SW_1 distance between pooled class distributions.
    """
    if a.task is not Task.CLASSIFICATION or b.task is not Task.CLASSIFICATION:
        raise RegressionUnsupported()
    if max_points is None:
        max_points = valuation_settings.OTDD_MAX_POINTS
    if a.n_rows + b.n_rows > max_points:
        raise ProblemTooLarge(f"OTDD on {a.n_rows + b.n_rows} points exceeds the limit of {max_points}")
    if b.source < a.source:
        a, b = b, a

    p = params.p
    feature_cost = cdist(a.features, b.features) ** p
    label_cost = np.asarray(label_distances)[np.ix_(a.targets, b.targets)] ** p
    ground = (feature_cost + label_cost) ** (1.0 / p)
    weights_a = np.full(a.n_rows, 1.0 / a.n_rows)
    weights_b = np.full(b.n_rows, 1.0 / b.n_rows)
    return float(ot.emd2(weights_a, weights_b, ground))
