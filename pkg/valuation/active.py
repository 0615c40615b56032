"""
Active selection
Greedily choose extra coalitions to evaluate so that the weighted posterior
variance of the semivalues drops the most, growing the inverse one
row/column at a time.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from .conf import valuation_settings
from .datasets import Coalition
from .exceptions import AlignmentError, BudgetExceedsPool, DegenerateSchur
from .gp import GPModel, factorize
from .kernel import CoalitionDistances, build_matrix
from .semivalue import WeightVector


logger = logging.getLogger(__name__)

# residual allowed between inv @ M and I before the inverse is rebuilt
INVERSE_TOLERANCE = 1e-8


def incremental_inverse(inv_prev: np.ndarray, new_column, new_diag: float, min_schur: float = 0.0) -> np.ndarray:
    """
    Inverse of [[M, b], [b', d]] from M^-1 through the Schur complement
    s = d - b' M^-1 b.
    """
    inv_prev = np.asarray(inv_prev, dtype=np.float64)
    column = np.asarray(new_column, dtype=np.float64)
    projected = inv_prev @ column
    schur = float(new_diag - column @ projected)
    if schur <= min_schur:
        raise DegenerateSchur(schur)

    grown = np.empty((inv_prev.shape[0] + 1,) * 2)
    grown[:-1, :-1] = inv_prev + np.outer(projected, projected) / schur
    grown[:-1, -1] = grown[-1, :-1] = -projected / schur
    grown[-1, -1] = 1.0 / schur
    return grown


def aggregate_weight(weight_vectors: Sequence[WeightVector]) -> np.ndarray:
    """Element-wise root-sum-square of the owners' weights over the same coalitions."""
    if not weight_vectors:
        raise AlignmentError("no weight vectors to aggregate")
    coalitions = weight_vectors[0].coalitions
    for vector in weight_vectors[1:]:
        if vector.coalitions != coalitions:
            raise AlignmentError(f"owner {vector.owner} is weighted over a different coalition list")
    stacked = np.vstack([vector.weights for vector in weight_vectors])
    return np.sqrt(np.sum(stacked ** 2, axis=0))


@dataclass
class SelectionState:
    chosen: List[Coalition] = field(default_factory=list)
    # (K + noise I)^-1 over the training coalitions followed by the chosen ones
    inv: Optional[np.ndarray] = None
    objective_trace: List[float] = field(default_factory=list)
    # objective of every open candidate, per pick
    scores: List[Dict[Coalition, float]] = field(default_factory=list)
    refactorizations: int = 0


def _dense_inverse(matrix: np.ndarray, noise: float) -> np.ndarray:
    chol, _ = factorize(matrix, noise, jitter_ladder=valuation_settings.JITTER_LADDER)
    return linalg.cho_solve((chol, True), np.eye(matrix.shape[0]))


def greedy_select(
    model: GPModel,
    candidates: Sequence[Coalition],
    weights,
    budget: int,
    distances: CoalitionDistances,
    incremental: bool = True,
    refactor_every: Optional[int] = None,
    executor=None,
) -> SelectionState:
    """
    Pick ``budget`` candidates one at a time, each maximizing
    w' K_{B,S} (K_{S,S} + noise I)^-1 K_{S,B} w with S the training set plus
    the picks so far. The first maximum wins ties.
    """
    candidates = tuple(candidates)
    weights = np.asarray(weights, dtype=np.float64)
    if not 0 <= budget <= len(candidates):
        raise BudgetExceedsPool(budget, len(candidates))
    if weights.shape != (len(candidates),):
        raise AlignmentError(f"{weights.shape[0]} weights for {len(candidates)} candidates")
    refactor_every = refactor_every or valuation_settings.REFACTOR_EVERY

    n_train = model.n_train
    noise = model.effective_noise
    pool = model.coalitions + candidates
    kernel = build_matrix(model.spec, pool, pool, distances, executor).entries
    # z[j] = k(pool_j, B) . w
    z = kernel[:, n_train:] @ weights

    rows = list(range(n_train))
    state = SelectionState(inv=linalg.cho_solve((model.chol, True), np.eye(n_train)))
    taken = set()

    def conditioning(indices):
        return kernel[np.ix_(indices, indices)]

    def score(j):
        g = n_train + j
        if incremental:
            try:
                grown = incremental_inverse(state.inv, kernel[rows, g], kernel[g, g] + noise)
            except DegenerateSchur as exc:
                logger.debug(f"Candidate {candidates[j]}: {exc}, refactorizing")
                grown = _dense_inverse(conditioning(rows + [g]), noise)
        else:
            grown = _dense_inverse(conditioning(rows + [g]), noise)
        projected = z[rows + [g]]
        return float(projected @ grown @ projected), grown

    for step in range(budget):
        open_candidates = [j for j in range(len(candidates)) if j not in taken]
        scored = list(executor.map(score, open_candidates)) if executor is not None else [score(j) for j in open_candidates]
        state.scores.append({candidates[j]: value for j, (value, _) in zip(open_candidates, scored)})

        best, best_score, best_inv = None, -np.inf, None
        for j, (value, grown) in zip(open_candidates, scored):
            if value > best_score:
                best, best_score, best_inv = j, value, grown

        taken.add(best)
        rows.append(n_train + best)
        state.chosen.append(candidates[best])
        state.objective_trace.append(best_score)

        matrix = conditioning(rows) + noise * np.eye(len(rows))
        needs_refactor = incremental and (step + 1) % refactor_every == 0
        if not needs_refactor and np.max(np.abs(best_inv @ matrix - np.eye(len(rows)))) > INVERSE_TOLERANCE:
            logger.debug(f"Inverse drifted after {step + 1} picks")
            needs_refactor = True
        if needs_refactor:
            state.inv = _dense_inverse(conditioning(rows), noise)
            state.refactorizations += 1
        else:
            state.inv = best_inv
        logger.debug(f"Pick {step + 1}: {candidates[best]} objective {best_score:.6g}")

    logger.info(f"Actively selected {len(state.chosen)} of {len(candidates)} candidate coalitions")
    return state
