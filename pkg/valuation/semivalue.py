"""
Semivalues
Weights per coalition size, weight vectors over a coalition list, the hybrid
(actual + predicted) assembly with its Gaussian uncertainty, permutation
sampling and the evaluation ledger.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import comb

from .conf import valuation_settings
from .datasets import Coalition
from .exceptions import (
    AlignmentError, DuplicateCoalition, InvalidBudget, MissingPrefix,
    SemivalueError, TooManyOwners, WeightNormalizationError,
)


logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-12


class SemivalueKind(str, Enum):
    SHAPLEY = 'shapley'
    BANZHAF = 'banzhaf'
    CUSTOM = 'custom'


@dataclass(frozen=True)
class SemivalueWeights:
    """omegas[c] weighs a marginal contribution to a coalition of size c (not counting the owner)."""

    kind: SemivalueKind
    n: int
    omegas: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'kind', SemivalueKind(self.kind))
        object.__setattr__(self, 'omegas', tuple(float(w) for w in self.omegas))
        if self.n < 1:
            raise SemivalueError(f"need at least one owner, got {self.n}")
        if len(self.omegas) != self.n:
            raise WeightNormalizationError(f"{len(self.omegas)} weights for {self.n} owners")
        if any(w < 0 for w in self.omegas):
            raise WeightNormalizationError("semivalue weights must be non-negative")
        total = sum(w * float(comb(self.n - 1, c, exact=True)) for c, w in enumerate(self.omegas))
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise WeightNormalizationError(f"weights sum to {total!r} over all coalitions, expected 1")

    @classmethod
    def shapley(cls, n: int) -> 'SemivalueWeights':
        return cls(SemivalueKind.SHAPLEY, n, [1.0 / (n * comb(n - 1, c, exact=True)) for c in range(n)])

    @classmethod
    def banzhaf(cls, n: int) -> 'SemivalueWeights':
        return cls(SemivalueKind.BANZHAF, n, [1.0 / 2 ** (n - 1)] * n)

    @classmethod
    def custom(cls, omegas: Sequence[float]) -> 'SemivalueWeights':
        return cls(SemivalueKind.CUSTOM, len(omegas), omegas)

    @classmethod
    def from_name(cls, name: str, n: int) -> 'SemivalueWeights':
        kind = SemivalueKind(name)
        if kind is SemivalueKind.CUSTOM:
            raise SemivalueError("custom weights need explicit omegas")
        return cls.shapley(n) if kind is SemivalueKind.SHAPLEY else cls.banzhaf(n)

    def omega(self, size: int) -> float:
        return self.omegas[size]


@dataclass(frozen=True, eq=False)
class WeightVector:
    owner: int
    coalitions: Tuple[Coalition, ...]
    weights: np.ndarray

    def __len__(self):
        return len(self.coalitions)

    def restrict(self, coalitions: Sequence[Coalition]) -> 'WeightVector':
        """The entries of ``coalitions``, in their order."""
        index = _index(self.coalitions)
        coalitions = tuple(coalitions)
        _index(coalitions)
        missing = [str(c) for c in coalitions if c not in index]
        if missing:
            raise AlignmentError(f"coalitions {missing} carry no weight for owner {self.owner}")
        return WeightVector(self.owner, coalitions, self.weights[[index[c] for c in coalitions]])


def _index(coalitions: Sequence[Coalition]) -> Dict[Coalition, int]:
    index = {}
    for j, coalition in enumerate(coalitions):
        if coalition in index:
            raise DuplicateCoalition(coalition)
        index[coalition] = j
    return index


def weight_vector(weights: SemivalueWeights, owner: int, coalitions: Sequence[Coalition]) -> WeightVector:
    """
    +omega(|C| - 1) where the owner belongs to C, -omega(|C|) where it does not.
    The empty coalition gets -omega(0).
    """
    if not 0 <= owner < weights.n:
        raise SemivalueError(f"owner {owner} is outside 0..{weights.n - 1}")
    coalitions = tuple(coalitions)
    _index(coalitions)
    entries = np.array([
        weights.omega(c.size - 1) if owner in c else -weights.omega(c.size)
        for c in coalitions
    ])
    return WeightVector(owner, coalitions, entries)


def permutation_weight_vector(
    permutations: Sequence[Sequence[int]], owner: int, coalitions: Sequence[Coalition]
) -> WeightVector:
    """Weights that turn the permutation estimate into a weighted sum over ``coalitions``."""
    coalitions = tuple(coalitions)
    index = _index(coalitions)
    entries = np.zeros(len(coalitions))
    share = 1.0 / len(permutations)
    for permutation in permutations:
        prefix = Coalition()
        for member in permutation:
            before, prefix = prefix, prefix.with_owner(member)
            if member != owner:
                continue
            if prefix not in index:
                raise MissingPrefix(prefix)
            entries[index[prefix]] += share
            if not before.is_empty:
                if before not in index:
                    raise MissingPrefix(before)
                entries[index[before]] -= share
            break
    return WeightVector(owner, coalitions, entries)


def exact_semivalue_bruteforce(utility: Callable[[Coalition], float], weights: SemivalueWeights) -> np.ndarray:
    """Direct double sum over every owner and every coalition without it; u(empty) is 0."""
    n = weights.n
    if n > valuation_settings.MAX_EXACT_OWNERS:
        raise TooManyOwners(f"{n} owners need 2^{n} evaluations, limit is {valuation_settings.MAX_EXACT_OWNERS} owners")
    masks = np.arange(1 << n)
    values = np.zeros(1 << n)
    for mask in masks[1:]:
        values[mask] = utility(Coalition(int(mask)))
    sizes = np.array([int(mask).bit_count() for mask in masks])
    omegas = np.asarray(weights.omegas)

    result = np.zeros(n)
    for owner in range(n):
        bit = 1 << owner
        without = masks[(masks & bit) == 0]
        result[owner] = np.sum(omegas[sizes[without]] * (values[without | bit] - values[without]))
    return result


def exact_shapley_bruteforce(utility: Callable[[Coalition], float], n: int) -> np.ndarray:
    if n > valuation_settings.MAX_EXACT_OWNERS:
        raise TooManyOwners(f"{n} owners need 2^{n} evaluations, limit is {valuation_settings.MAX_EXACT_OWNERS} owners")
    return exact_semivalue_bruteforce(utility, SemivalueWeights.shapley(n))


def total_uncertainty(sigma_gp: float, sigma_mc: float) -> float:
    """Bound on the squared error: (sigma_gp + sigma_mc)^2."""
    if not (math.isfinite(sigma_gp) and math.isfinite(sigma_mc)) or sigma_gp < 0 or sigma_mc < 0:
        raise SemivalueError(f"standard deviations must be finite and non-negative, got {sigma_gp}, {sigma_mc}")
    return (sigma_gp + sigma_mc) ** 2


@dataclass(frozen=True)
class OwnerValue:
    owner: int
    mean: float
    std_gp: float = 0.0
    std_mc: Optional[float] = None

    @property
    def total_std_bound(self) -> float:
        return self.std_gp + (self.std_mc or 0.0)

    @property
    def variance_bound(self) -> float:
        return total_uncertainty(self.std_gp, self.std_mc or 0.0)


def semivalue_from_hybrid(
    w_actual: WeightVector,
    w_predicted: WeightVector,
    actual_utilities,
    posterior=None,
) -> OwnerValue:
    """
    mean = w_A . u_A + w_B . E[u_B], variance = w_B' V[u_B] w_B.
    Evaluated utilities carry no variance.
    """
    if w_actual.owner != w_predicted.owner:
        raise AlignmentError(f"weight vectors belong to owners {w_actual.owner} and {w_predicted.owner}")
    actual_utilities = np.asarray(actual_utilities, dtype=np.float64)
    if actual_utilities.shape != (len(w_actual),):
        raise AlignmentError(f"{len(w_actual)} actual weights but {actual_utilities.shape[0]} utilities")

    mean = float(w_actual.weights @ actual_utilities) if len(w_actual) else 0.0
    variance = 0.0
    if len(w_predicted):
        if posterior is None or tuple(posterior.coalitions) != w_predicted.coalitions:
            raise AlignmentError("posterior coalitions do not follow the predicted weight vector")
        mean += float(w_predicted.weights @ posterior.mean)
        variance = float(w_predicted.weights @ posterior.cov @ w_predicted.weights)
    return OwnerValue(w_actual.owner, mean, math.sqrt(max(variance, 0.0)))


@dataclass(frozen=True)
class ProvenanceRow:
    coalition: Coalition
    source: str
    utility: float
    std: float = 0.0
    degenerate: bool = False

    @property
    def key(self) -> str:
        return self.coalition.key

    @property
    def members(self) -> str:
        return str(self.coalition)


@dataclass(frozen=True)
class SemivalueReport:
    values: Tuple[OwnerValue, ...]
    method: str
    semivalue: str
    n_actual: int
    n_predicted: int
    kernel: Optional[Dict] = None
    coalitions: Tuple[ProvenanceRow, ...] = ()

    @property
    def means(self) -> np.ndarray:
        return np.array([value.mean for value in self.values])

    @property
    def owners(self) -> Tuple[int, ...]:
        return tuple(value.owner for value in self.values)


# permutation sampling

@dataclass(frozen=True)
class PermutationSample:
    coalitions: Tuple[Coalition, ...]
    permutations: Tuple[Tuple[int, ...], ...]


def sample_permutation_coalitions(n_coalitions: int, n: int, seed: int = 0) -> PermutationSample:
    """Draw whole permutations until their prefixes cover ``n_coalitions`` distinct coalitions."""
    if n_coalitions < n:
        raise InvalidBudget(f"a single permutation already yields {n} coalitions, budget is {n_coalitions}")
    if n_coalitions > (1 << n) - 1:
        raise InvalidBudget(f"only {(1 << n) - 1} non-empty coalitions exist for {n} owners")
    rng = np.random.default_rng(seed)
    seen: Dict[Coalition, None] = {}
    permutations = []
    while len(seen) < n_coalitions:
        permutation = tuple(int(i) for i in rng.permutation(n))
        permutations.append(permutation)
        prefix = Coalition()
        for member in permutation:
            prefix = prefix.with_owner(member)
            seen.setdefault(prefix, None)
    logger.debug(f"{len(permutations)} permutations cover {len(seen)} coalitions")
    return PermutationSample(tuple(seen), tuple(permutations))


@dataclass(frozen=True, eq=False)
class PermutationEstimate:
    values: np.ndarray
    # marginals[r, i]: contribution of owner i in permutation r
    marginals: np.ndarray

    @property
    def n_permutations(self) -> int:
        return self.marginals.shape[0]

    @property
    def mc_std(self) -> Optional[np.ndarray]:
        if self.n_permutations < 2:
            return None
        return np.std(self.marginals, axis=0, ddof=1) / math.sqrt(self.n_permutations)


def shapley_permutation_estimate(permutations: Sequence[Sequence[int]], ledger: 'EvaluationLedger', n: int) -> PermutationEstimate:
    if not permutations:
        raise InvalidBudget("no permutations to average")
    share = 1.0 / len(permutations)
    values = np.zeros(n)
    marginals = np.zeros((len(permutations), n))
    for r, permutation in enumerate(permutations):
        prefix = Coalition()
        previous = 0.0
        for member in permutation:
            prefix = prefix.with_owner(member)
            if prefix not in ledger:
                raise MissingPrefix(prefix)
            current = ledger.utility(prefix)
            marginals[r, member] = current - previous
            values[member] += (current - previous) * share
            previous = current
    return PermutationEstimate(values, marginals)


# ledger

class Source(str, Enum):
    ACTUAL = 'actual'
    PREDICTED = 'predicted'


@dataclass(frozen=True)
class LedgerEntry:
    utility: float
    source: Source
    order: int
    std: float = 0.0
    degenerate: bool = False


class EvaluationLedger:
    """
    Coalition -> utility with provenance.
    Insert-if-absent under a lock; an actual entry is never replaced.
    """

    def __init__(self):
        self._entries: Dict[Coalition, LedgerEntry] = {}
        self._lock = threading.Lock()
        self._frozen = False

    def __contains__(self, coalition) -> bool:
        return coalition in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        self._frozen = True

    def get(self, coalition: Coalition) -> Optional[LedgerEntry]:
        return self._entries.get(coalition)

    def _insert(self, coalition: Coalition, entry_for) -> LedgerEntry:
        if coalition.is_empty:
            raise SemivalueError("the empty coalition is fixed at utility 0")
        with self._lock:
            if self._frozen:
                raise SemivalueError("ledger is frozen")
            existing = self._entries.get(coalition)
            entry = entry_for(existing, existing.order if existing else len(self._entries))
            self._entries[coalition] = entry
            return entry

    def record_actual(self, coalition: Coalition, utility: float, degenerate: bool = False) -> LedgerEntry:
        def entry_for(existing, order):
            if existing is not None and existing.source is Source.ACTUAL:
                return existing
            return LedgerEntry(float(utility), Source.ACTUAL, order, degenerate=degenerate)
        return self._insert(coalition, entry_for)

    def record_predicted(self, coalition: Coalition, mean: float, std: float = 0.0) -> LedgerEntry:
        def entry_for(existing, order):
            if existing is not None:
                return existing
            return LedgerEntry(float(mean), Source.PREDICTED, order, std=float(std))
        return self._insert(coalition, entry_for)

    def utility(self, coalition: Coalition) -> float:
        if coalition.is_empty:
            return 0.0
        entry = self._entries.get(coalition)
        if entry is None:
            raise MissingPrefix(coalition)
        return entry.utility

    def entries(self) -> List[Tuple[Coalition, LedgerEntry]]:
        return sorted(self._entries.items(), key=lambda item: item[1].order)

    def coalitions(self, source: Optional[Source] = None) -> List[Coalition]:
        return [c for c, entry in self.entries() if source is None or entry.source is source]

    def counts(self) -> Dict[str, int]:
        counts = {source.value: 0 for source in Source}
        for entry in self._entries.values():
            counts[entry.source.value] += 1
        return counts

    def provenance(self) -> Tuple[ProvenanceRow, ...]:
        return tuple(
            ProvenanceRow(c, entry.source.value, entry.utility, entry.std, entry.degenerate)
            for c, entry in self.entries()
        )
