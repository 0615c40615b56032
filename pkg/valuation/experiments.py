"""
Experiment harness
Desk-scale comparisons on synthetic owners: how well each kernel predicts
held-out coalition utilities, how much active selection shrinks semivalue
variance against random selection, and how the SSW mixing weight eta
matters.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .active import aggregate_weight, greedy_select
from .datasets import AggregatedDataset, Coalition, OwnerDataset, make_blobs, make_moons, split_validation
from .gp import HyperparameterGrid, condition, fit, predict
from .kernel import CoalitionDistances, KernelFamily
from .pipeline import all_coalitions
from .semivalue import EvaluationLedger, SemivalueWeights, weight_vector
from .transport import SWParams
from .utility import UtilityFn, UtilityKind, evaluate_all


logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Setup:
    """Owners, a utility and every non-empty coalition already evaluated."""

    owners: List[OwnerDataset]
    utility: UtilityFn
    ledger: EvaluationLedger
    coalitions: Tuple[Coalition, ...]
    distances: CoalitionDistances

    @property
    def n_owners(self) -> int:
        return len(self.owners)

    def utilities(self, coalitions: Sequence[Coalition]) -> np.ndarray:
        return np.array([self.ledger.utility(c) for c in coalitions])


def owners_setup(
    owners: Sequence[OwnerDataset],
    validation: AggregatedDataset,
    k: int = 5,
    seed: int = 0,
    sw: Optional[SWParams] = None,
    executor=None,
) -> Setup:
    """k-NN accuracy on ``validation`` as the utility, evaluated on every non-empty coalition."""
    owners = list(owners)
    utility = UtilityFn(UtilityKind.KNN, validation, k=k, seed=seed)
    coalitions = all_coalitions(len(owners))
    ledger = EvaluationLedger()
    evaluate_all(utility, coalitions, owners, ledger, executor)
    return Setup(owners, utility, ledger, coalitions, CoalitionDistances(owners, sw=sw))


def moons_setup(
    n_owners: int = 6,
    points_per_owner: int = 40,
    noise: float = 0.1,
    k: int = 5,
    seed: int = 0,
    validation_fraction: float = 0.2,
    sw: Optional[SWParams] = None,
    executor=None,
) -> Setup:
    owners = make_moons(n_owners, points_per_owner, noise, seed)
    owners, validation = split_validation(owners, validation_fraction, seed)
    return owners_setup(owners, validation, k, seed, sw, executor)


def blobs_setup(
    centers,
    assignment: Sequence[Sequence[int]],
    spread: float = 1.0,
    points_per_owner: int = 20,
    k: int = 5,
    seed: int = 0,
    validation_fraction: float = 0.2,
    sw: Optional[SWParams] = None,
    executor=None,
) -> Setup:
    """Owners restricted to the classes in ``assignment``, so coalitions differ in class coverage."""
    owners = make_blobs(len(assignment), centers, spread, assignment, points_per_owner, seed)
    owners, validation = split_validation(owners, validation_fraction, seed)
    return owners_setup(owners, validation, k, seed, sw, executor)


def split(setup: Setup, fraction: float, seed: int) -> Tuple[List[Coalition], List[Coalition]]:
    """Grand coalition plus a random ``fraction`` of the others for training, the rest held out."""
    grand = Coalition.grand(setup.n_owners)
    rest = [c for c in setup.coalitions if c != grand]
    order = np.random.default_rng(seed).permutation(len(rest))
    n_train = int(round(fraction * len(rest)))
    return [grand] + [rest[i] for i in order[:n_train]], [rest[i] for i in order[n_train:]]


def family_grid(setup: Setup, family, **overrides) -> HyperparameterGrid:
    return HyperparameterGrid.from_settings(families=(KernelFamily(family),), sw=setup.distances.sw, **overrides)


@dataclass(frozen=True)
class PredictionScore:
    mse: float
    pearson: Optional[float]


def utility_prediction_trial(
    setup: Setup, family, fraction: float = 0.5, seed: int = 0, executor=None, **grid_overrides
) -> PredictionScore:
    train, test = split(setup, fraction, seed)
    model = fit(family_grid(setup, family, **grid_overrides), train, setup.utilities(train), setup.distances, executor)
    posterior = predict(model, test, setup.distances, executor)
    truth = setup.utilities(test)
    mse = float(np.mean((posterior.mean - truth) ** 2))
    pearson = None
    if np.ptp(truth) > 0 and np.ptp(posterior.mean) > 0:
        pearson = float(stats.pearsonr(posterior.mean, truth).statistic)
    return PredictionScore(mse, pearson)


@dataclass(frozen=True)
class SelectionComparison:
    active_variance: float
    random_variance: float
    active: Tuple[Coalition, ...]
    random: Tuple[Coalition, ...]


def active_selection_trial(
    setup: Setup,
    extra: int = 10,
    fraction: float = 0.5,
    seed: int = 0,
    family=KernelFamily.SSW_SQ_EXP,
    executor=None,
    **grid_overrides,
) -> SelectionComparison:
    """
    Mean per-owner Shapley variance of the still-predicted coalitions after
    evaluating ``extra`` more, chosen greedily versus uniformly at random.
    Hyperparameters stay at the values fitted before selection.
    """
    n = setup.n_owners
    shapley = SemivalueWeights.shapley(n)
    train, pool = split(setup, fraction, seed)
    model = fit(family_grid(setup, family, **grid_overrides), train, setup.utilities(train), setup.distances, executor)

    weights = aggregate_weight([weight_vector(shapley, owner, pool) for owner in range(n)])
    active = greedy_select(model, pool, weights, extra, setup.distances, executor=executor).chosen
    rng = np.random.default_rng(seed + 1)
    random = [pool[i] for i in rng.choice(len(pool), size=extra, replace=False)]

    def mean_variance(picked):
        evaluated = train + list(picked)
        taken = set(picked)
        remaining = [c for c in pool if c not in taken]
        if not remaining:
            return 0.0
        conditioned = condition(model.spec, model.noise_var, evaluated, setup.utilities(evaluated), setup.distances)
        posterior = predict(conditioned, remaining, setup.distances, executor)
        variances = []
        for owner in range(n):
            w = weight_vector(shapley, owner, remaining).weights
            variances.append(max(float(w @ posterior.cov @ w), 0.0))
        return float(np.mean(variances))

    return SelectionComparison(mean_variance(active), mean_variance(random), tuple(active), tuple(random))


def eta_ablation(
    setup: Setup, etas: Sequence[float], fraction: float = 0.5, seeds: Sequence[int] = (0,), executor=None
) -> Dict[float, float]:
    """Mean utility-prediction MSE of the SSW kernel with eta pinned to each value."""
    results = {}
    for eta in etas:
        scores = [
            utility_prediction_trial(setup, KernelFamily.SSW_SQ_EXP, fraction, seed, executor, etas=[eta])
            for seed in seeds
        ]
        results[float(eta)] = float(np.mean([score.mse for score in scores]))
        logger.info(f"eta={eta:g}: mean MSE {results[float(eta)]:.4e}")
    return results
