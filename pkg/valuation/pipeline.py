"""
Valuation pipeline
Enumerate or sample coalitions, split them into evaluated and predicted
families, optionally grow the evaluated family by active selection, fit the
GP, predict the rest and assemble semivalues with their uncertainty.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rest_framework.renderers import JSONRenderer
from scipy import stats

from .active import aggregate_weight, greedy_select
from .conf import valuation_settings
from .config import RunConfig
from .datasets import (
    AggregatedDataset, Coalition, OwnerDataset, load_csv, make_blobs,
    make_moons, split_validation,
)
from .exceptions import (
    ConfigError, OwnerMismatch, PipelineError, TooManyOwners, ValuationError,
)
from .gp import GPModel, HyperparameterGrid, Posterior, condition, fit, predict
from .kernel import CoalitionDistances
from .semivalue import (
    EvaluationLedger, OwnerValue, ProvenanceRow, SemivalueReport,
    SemivalueWeights, Source, WeightVector, permutation_weight_vector,
    sample_permutation_coalitions, semivalue_from_hybrid,
    shapley_permutation_estimate, weight_vector,
)
from .serializers import SemivalueReportSerializer
from .transport import SWParams
from .utility import UtilityFn, evaluate_all


logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['evaluated', 'owner', 'mean', 'std', 'lower', 'upper']


@contextmanager
def stage(name: str):
    """Tag engine errors raised inside the block with the stage name."""
    logger.info(f"Stage: {name}")
    try:
        yield
    except PipelineError:
        raise
    except ValuationError as exc:
        raise PipelineError(name, exc) from exc


@dataclass(frozen=True, eq=False)
class LoadedData:
    owners: List[OwnerDataset]
    validation: Optional[AggregatedDataset]
    label_mapping: Optional[Dict[str, int]] = None


def load_owners(config: RunConfig, holdout: bool = True) -> LoadedData:
    label_mapping = None
    if config.dataset == 'csv':
        imported = load_csv(config.csv_path, config.target_column, config.task, config.owner_column)
        owners, label_mapping = imported.owners, imported.label_mapping
    elif config.dataset == 'blobs':
        owners = make_blobs(
            config.n_owners, config.centers, config.spread, config.assignment,
            config.points_per_owner, config.seed,
        )
    else:
        owners = make_moons(config.n_owners, config.points_per_owner, config.noise, config.seed)

    if not holdout or config.utility.startswith('table'):
        return LoadedData(owners, None, label_mapping)
    kept, validation = split_validation(owners, config.holdout, config.seed)
    return LoadedData(kept, validation, label_mapping)


def all_coalitions(n: int) -> Tuple[Coalition, ...]:
    if n > valuation_settings.MAX_EXACT_OWNERS:
        raise TooManyOwners(
            f"exact enumeration of {n} owners is capped at {valuation_settings.MAX_EXACT_OWNERS}, use the permutation method"
        )
    return tuple(Coalition(mask) for mask in range(1, 1 << n))


def partition(
    universe: Sequence[Coalition], n: int, fraction: float, rng: np.random.Generator
) -> Tuple[List[Coalition], List[Coalition]]:
    """Random split; the grand coalition is always evaluated."""
    grand = Coalition.grand(n)
    rest = [c for c in universe if c != grand]
    n_actual = min(len(universe), max(1, int(round(fraction * len(universe)))))
    picked = [rest[i] for i in rng.permutation(len(rest))[:n_actual - 1]]
    chosen = set(picked)
    return [grand] + picked, [c for c in rest if c not in chosen]


Weigher = Callable[[int, Sequence[Coalition]], WeightVector]


def make_weigher(config: RunConfig, n: int, universe: Sequence[Coalition], permutations=None) -> Weigher:
    if config.method == 'permutation':
        # prefixes of one permutation may land on both sides of the partition
        full = {owner: permutation_weight_vector(permutations, owner, universe) for owner in range(n)}
        return lambda owner, coalitions: full[owner].restrict(coalitions)
    weights = SemivalueWeights.from_name(config.semivalue, n)
    return lambda owner, coalitions: weight_vector(weights, owner, coalitions)


def assemble(
    weigh: Weigher,
    n: int,
    actual: Sequence[Coalition],
    actual_utilities,
    posterior: Optional[Posterior],
) -> List[OwnerValue]:
    predicted = posterior.coalitions if posterior is not None else ()
    return [
        semivalue_from_hybrid(weigh(owner, actual), weigh(owner, predicted), actual_utilities, posterior)
        for owner in range(n)
    ]


def uncertainty_curve(
    model: GPModel,
    actual: Sequence[Coalition],
    actual_utilities,
    universe: Sequence[Coalition],
    weigh: Weigher,
    n: int,
    distances: CoalitionDistances,
    checkpoints: int,
    executor=None,
) -> List[Dict]:
    """
    Semivalue mean and one-sigma band per owner as the evaluated set grows
    along its evaluation order, hyperparameters held at the fitted values.
    """
    actual = list(actual)
    actual_utilities = np.asarray(actual_utilities, dtype=np.float64)
    if len(actual) < 2:
        return []
    sizes = sorted({int(round(size)) for size in np.linspace(2, len(actual), checkpoints)})
    rows = []
    for size in sizes:
        subset, utilities = actual[:size], actual_utilities[:size]
        evaluated = set(subset)
        rest = tuple(c for c in universe if c not in evaluated)
        conditioned = condition(model.spec, model.noise_var, subset, utilities, distances, executor=executor)
        posterior = predict(conditioned, rest, distances, executor)
        for value in assemble(weigh, n, subset, utilities, posterior):
            rows.append({
                'evaluated': size,
                'owner': value.owner,
                'mean': value.mean,
                'std': value.std_gp,
                'lower': value.mean - value.std_gp,
                'upper': value.mean + value.std_gp,
            })
    return rows


@dataclass(eq=False)
class ValuationRun:
    config: RunConfig
    report: SemivalueReport
    ledger: EvaluationLedger
    owners: List[OwnerDataset]
    model: Optional[GPModel] = None
    posterior: Optional[Posterior] = None
    label_mapping: Optional[Dict[str, int]] = None
    curve: List[Dict] = field(default_factory=list)


def build_grid(config: RunConfig, sw: SWParams) -> HyperparameterGrid:
    return HyperparameterGrid.from_settings(
        families=config.kernels, sw=sw,
        gammas=config.gammas, noise_vars=config.noise_vars, rhos=config.rhos, etas=config.etas,
    )


def run_valuation(config: RunConfig, executor=None) -> ValuationRun:
    if executor is None:
        with ThreadPoolExecutor(max_workers=config.threads or valuation_settings.THREADS) as pool:
            return run_valuation(config, pool)

    with stage('load'):
        data = load_owners(config)
        n = len(data.owners)
        utility = UtilityFn.parse(config.utility, validation=data.validation, seed=config.seed)

    with stage('sample'):
        permutations = None
        if config.method == 'permutation':
            sample = sample_permutation_coalitions(config.budget, n, config.seed)
            universe, permutations = sample.coalitions, sample.permutations
        else:
            universe = all_coalitions(n)
        weigh = make_weigher(config, n, universe, permutations)

    rng = np.random.default_rng(config.seed)
    with stage('partition'):
        actual, predicted = partition(universe, n, config.actual_fraction, rng)
        if predicted and len(actual) < 2:
            raise ConfigError("the GP needs at least two evaluated coalitions, raise the actual fraction")
        n_active = min(len(predicted), int(round(config.active_fraction * (1 - config.actual_fraction) * len(universe))))
        logger.info(f"{len(universe)} coalitions: {len(actual)} evaluated, {len(predicted)} to predict")

    ledger = EvaluationLedger()
    with stage('evaluate'):
        evaluate_all(utility, actual, data.owners, ledger, executor)

    sw = SWParams.from_settings(n_projections=config.projections, seed=config.seed)
    distances = CoalitionDistances(data.owners, sw=sw)
    grid = build_grid(config, sw)
    model, posterior = None, None

    if predicted:
        with stage('project'):
            distances.prepare([spec for spec, _ in grid.candidates()], universe, executor)
        with stage('fit'):
            model = fit(grid, actual, [ledger.utility(c) for c in actual], distances, executor)
        if n_active:
            with stage('select'):
                weights = aggregate_weight([weigh(owner, predicted) for owner in range(n)])
                selection = greedy_select(model, predicted, weights, n_active, distances, executor=executor)
            with stage('evaluate'):
                evaluate_all(utility, selection.chosen, data.owners, ledger, executor)
            chosen = set(selection.chosen)
            actual = actual + selection.chosen
            predicted = [c for c in predicted if c not in chosen]
            if predicted:
                with stage('fit'):
                    model = fit(grid, actual, [ledger.utility(c) for c in actual], distances, executor)
        if predicted:
            with stage('predict'):
                posterior = predict(model, predicted, distances, executor)
                for coalition, mean, std in zip(posterior.coalitions, posterior.mean, posterior.std):
                    ledger.record_predicted(coalition, mean, std)
    ledger.freeze()

    actual_utilities = np.array([ledger.utility(c) for c in actual])
    with stage('assemble'):
        values = assemble(weigh, n, actual, actual_utilities, posterior)
        if permutations is not None:
            estimate = shapley_permutation_estimate(permutations, ledger, n)
            mc_std = estimate.mc_std
            if mc_std is not None:
                values = [replace(value, std_mc=float(mc_std[value.owner])) for value in values]

    counts = ledger.counts()
    report = SemivalueReport(
        values=tuple(values),
        method=config.method,
        semivalue=config.semivalue,
        n_actual=counts[Source.ACTUAL.value],
        n_predicted=counts[Source.PREDICTED.value],
        kernel=model.summary() if model is not None else None,
        coalitions=ledger.provenance(),
    )

    curve = []
    if model is not None:
        with stage('report'):
            curve = uncertainty_curve(
                model, actual, actual_utilities, universe, weigh, n, distances, config.n_checkpoints, executor
            )
    logger.info(f"Valued {n} owners from {report.n_actual} evaluated and {report.n_predicted} predicted coalitions")
    return ValuationRun(config, report, ledger, data.owners, model, posterior, data.label_mapping, curve)


# artifacts

def render_json(data) -> bytes:
    return JSONRenderer().render(data, renderer_context={'indent': 2}) + b'\n'


def report_data(report: SemivalueReport) -> Dict:
    return SemivalueReportSerializer(report).data


def write_artifacts(run: ValuationRun, directory) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {'report': directory / 'report.json', 'uncertainty': directory / 'uncertainty.csv'}
    paths['report'].write_bytes(render_json(report_data(run.report)))
    pd.DataFrame(run.curve, columns=CURVE_COLUMNS).to_csv(paths['uncertainty'], index=False)
    if run.label_mapping:
        paths['labels'] = directory / 'labels.json'
        paths['labels'].write_bytes(render_json(run.label_mapping))
    logger.info(f"Artifacts written to {directory}")
    return paths


def load_report(path) -> SemivalueReport:
    try:
        raw = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc
    serializer = SemivalueReportSerializer(data=raw)
    if not serializer.is_valid():
        raise ConfigError(f"{path} is not a valuation report: {json.dumps(serializer.errors, default=str)}")
    data = serializer.validated_data
    return SemivalueReport(
        values=tuple(
            OwnerValue(value['owner'], value['mean'], value['std_gp'], value.get('std_mc'))
            for value in sorted(data['values'], key=lambda value: value['owner'])
        ),
        method=data['method'],
        semivalue=data['semivalue'],
        n_actual=data['n_actual'],
        n_predicted=data['n_predicted'],
        kernel=data.get('kernel'),
        coalitions=tuple(
            ProvenanceRow(Coalition.from_key(row['key']), row['source'], row['utility'], row['std'], row['degenerate'])
            for row in data.get('coalitions') or ()
        ),
    )


# method comparison

@dataclass(frozen=True)
class ValueMetrics:
    mse: float
    pearson: Optional[float]
    kendall_tau: Optional[float]


def _finite_or_none(value) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


def value_metrics(values, reference) -> ValueMetrics:
    """MSE, Pearson and Kendall tau of per-owner values against a reference."""
    values = np.asarray(values, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if values.shape != reference.shape:
        raise OwnerMismatch(f"{values.shape[0]} owners against a reference of {reference.shape[0]}")
    mse = float(np.mean((values - reference) ** 2))
    pearson = tau = None
    if values.shape[0] >= 2 and np.ptp(values) > 0 and np.ptp(reference) > 0:
        pearson = _finite_or_none(stats.pearsonr(values, reference).statistic)
        tau = _finite_or_none(stats.kendalltau(values, reference).statistic)
    return ValueMetrics(mse, pearson, tau)


def compare_reports(report: SemivalueReport, reference: SemivalueReport) -> ValueMetrics:
    if report.owners != reference.owners:
        raise OwnerMismatch(f"owners {report.owners} against reference owners {reference.owners}")
    return value_metrics(report.means, reference.means)


@dataclass(frozen=True)
class MethodComparison:
    label: str
    runs: int
    mse_mean: float
    mse_std: float
    pearson_mean: Optional[float]
    pearson_std: Optional[float]
    kendall_tau_mean: Optional[float]
    kendall_tau_std: Optional[float]


def _mean_std(samples) -> Tuple[Optional[float], Optional[float]]:
    samples = [s for s in samples if s is not None]
    if not samples:
        return None, None
    return float(np.mean(samples)), float(np.std(samples))


def compare_methods(
    configs: Sequence[RunConfig], reference: SemivalueReport, seeds: Optional[Sequence[int]] = None
) -> List[MethodComparison]:
    """Run every config once per seed and summarize its agreement with the reference."""
    table = []
    for config in configs:
        metrics = [
            compare_reports(run_valuation(replace(config, seed=seed)).report, reference)
            for seed in (seeds if seeds is not None else (config.seed,))
        ]
        mse = _mean_std([m.mse for m in metrics])
        pearson = _mean_std([m.pearson for m in metrics])
        tau = _mean_std([m.kendall_tau for m in metrics])
        table.append(MethodComparison(config.label, len(metrics), *mse, *pearson, *tau))
        logger.info(f"{config.label}: MSE {mse[0]:.3e} over {len(metrics)} runs")
    return table
