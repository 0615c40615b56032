"""
Gaussian process over coalition utilities
Exact inference: one Cholesky factorization per fit, back-substitutions per
prediction, hyperparameters chosen by exhaustive grid search on the log
marginal likelihood.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .conf import valuation_settings
from .datasets import Coalition
from .exceptions import EmptyGrid, FactorizationFailure, GPError, PosteriorInconsistency
from .kernel import (
    SSW_FAMILIES, CoalitionDistances, KernelFamily, KernelSpec, build_matrix,
    distance_matrix, kernel_from_distances, psd_check,
)
from .transport import SWParams


logger = logging.getLogger(__name__)

# posterior variances below -VARIANCE_FLOOR are a bug, above it they are rounding;
# an ill-conditioned factor widens the band to n eps / (noise + jitter)
VARIANCE_FLOOR = 1e-10

DEFAULT_FAMILIES = (KernelFamily.SSW_SQ_EXP, KernelFamily.SSW_L1_EXP)


@dataclass(frozen=True)
class HyperparameterGrid:
    families: Tuple[KernelFamily, ...] = DEFAULT_FAMILIES
    gammas: Tuple[float, ...] = (1.0,)
    noise_vars: Tuple[float, ...] = (1e-6,)
    rhos: Tuple[float, ...] = (1.0,)
    etas: Tuple[float, ...] = (0.5,)
    sw: SWParams = field(default_factory=SWParams)

    def __post_init__(self):
        object.__setattr__(self, 'families', tuple(KernelFamily(f) for f in self.families))
        for name in ('gammas', 'noise_vars', 'rhos', 'etas'):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if any(v < 0 for v in self.noise_vars):
            raise GPError(f"noise variances must be non-negative, got {self.noise_vars}")

    @classmethod
    def from_settings(cls, families=None, sw: Optional[SWParams] = None, **overrides) -> 'HyperparameterGrid':
        values = {
            'families': families or DEFAULT_FAMILIES,
            'gammas': valuation_settings.GAMMA_GRID,
            'noise_vars': valuation_settings.NOISE_GRID,
            'rhos': valuation_settings.RHO_GRID,
            'etas': valuation_settings.ETA_GRID,
            'sw': sw or SWParams.from_settings(),
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    @classmethod
    def single(cls, spec: KernelSpec, noise_var: float) -> 'HyperparameterGrid':
        return cls(
            families=(spec.family,), gammas=(spec.gamma,), noise_vars=(noise_var,),
            rhos=(spec.sw.rho,), etas=(spec.eta,), sw=spec.sw,
        )

    def candidates(self) -> List[Tuple[KernelSpec, float]]:
        candidates = []
        for family in self.families:
            # eta only moves supervised distances, rho does nothing for indicators
            etas = self.etas if family in SSW_FAMILIES else self.etas[:1]
            rhos = (1.0,) if family is KernelFamily.BINARY_RBF else self.rhos
            for eta in etas:
                for rho in rhos:
                    sw = replace(self.sw, rho=rho)
                    for gamma in self.gammas:
                        for noise_var in self.noise_vars:
                            candidates.append((KernelSpec(family, gamma, sw, eta), noise_var))
        return candidates


@dataclass(frozen=True, eq=False)
class GPModel:
    spec: KernelSpec
    noise_var: float
    coalitions: Tuple[Coalition, ...]
    utilities: np.ndarray
    prior_mean: float
    # lower Cholesky factor of K + (noise_var + jitter) I
    chol: np.ndarray
    # (K + (noise_var + jitter) I)^-1 (u - prior_mean)
    alpha: np.ndarray
    jitter: float
    log_likelihood: float

    @property
    def n_train(self) -> int:
        return len(self.coalitions)

    @property
    def effective_noise(self) -> float:
        return self.noise_var + self.jitter

    def summary(self) -> Dict:
        summary = self.spec.describe()
        summary.update({
            'noise_var': self.noise_var,
            'jitter': self.jitter,
            'prior_mean': self.prior_mean,
            'log_likelihood': self.log_likelihood,
            'n_train': self.n_train,
        })
        return summary


@dataclass(frozen=True, eq=False)
class Posterior:
    coalitions: Tuple[Coalition, ...]
    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def factorize(matrix: np.ndarray, noise_var: float, jitter_ladder: Optional[Sequence[float]] = None):
    """Cholesky of matrix + (noise_var + jitter) I, climbing the jitter ladder until it succeeds."""
    ladder = valuation_settings.JITTER_LADDER if jitter_ladder is None else jitter_ladder
    identity = np.eye(matrix.shape[0])
    for jitter in ladder:
        try:
            chol = linalg.cholesky(matrix + (noise_var + jitter) * identity, lower=True)
        except linalg.LinAlgError:
            continue
        if jitter > 0:
            logger.debug(f"Cholesky needed jitter {jitter:.0e}")
        return chol, float(jitter)
    raise FactorizationFailure(f"matrix of size {matrix.shape[0]} not PD after jitter {ladder[-1]:.0e}")


def _log_likelihood(chol: np.ndarray, alpha: np.ndarray, residual: np.ndarray) -> float:
    return float(
        -0.5 * residual @ alpha
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * len(residual) * math.log(2 * math.pi)
    )


def _condition_on(
    spec: KernelSpec,
    noise_var: float,
    coalitions: Tuple[Coalition, ...],
    utilities: np.ndarray,
    prior_mean: float,
    matrix: np.ndarray,
    jitter_ladder=None,
) -> GPModel:
    chol, jitter = factorize(matrix, noise_var, jitter_ladder)
    residual = utilities - prior_mean
    alpha = linalg.cho_solve((chol, True), residual)
    for array in (chol, alpha):
        array.setflags(write=False)
    return GPModel(
        spec, float(noise_var), coalitions, utilities, float(prior_mean),
        chol, alpha, jitter, _log_likelihood(chol, alpha, residual),
    )


def _check_training(coalitions, utilities, minimum: int) -> Tuple[Tuple[Coalition, ...], np.ndarray]:
    coalitions = tuple(coalitions)
    utilities = np.array(utilities, dtype=np.float64)
    if len(coalitions) < minimum:
        raise GPError(f"need at least {minimum} training coalitions, got {len(coalitions)}")
    if utilities.shape != (len(coalitions),):
        raise GPError(f"{len(coalitions)} coalitions but utilities of shape {utilities.shape}")
    if not np.all(np.isfinite(utilities)):
        raise GPError("training utilities must be finite")
    utilities.setflags(write=False)
    return coalitions, utilities


def condition(
    spec: KernelSpec,
    noise_var: float,
    coalitions: Sequence[Coalition],
    utilities,
    distances: CoalitionDistances,
    prior_mean: Optional[float] = None,
    executor=None,
    jitter_ladder=None,
) -> GPModel:
    """GP with fixed hyperparameters; the prior mean defaults to the mean of ``utilities``."""
    coalitions, utilities = _check_training(coalitions, utilities, 1)
    if prior_mean is None:
        prior_mean = float(np.mean(utilities))
    matrix = build_matrix(spec, coalitions, coalitions, distances, executor).entries
    return _condition_on(spec, noise_var, coalitions, utilities, prior_mean, matrix, jitter_ladder)


def fit(
    grid: HyperparameterGrid,
    coalitions: Sequence[Coalition],
    utilities,
    distances: CoalitionDistances,
    executor=None,
    jitter_ladder=None,
) -> GPModel:
    """
    Pick the grid candidate with the largest log marginal likelihood.
    Ties go to the larger noise variance, then to the earlier candidate.
    Raw distance matrices are computed once per distance key and reused
    for every gamma and rho. Candidates whose kernel matrix fails
    ``psd_check`` are dropped before scoring.
    """
    coalitions, utilities = _check_training(coalitions, utilities, 2)
    candidates = grid.candidates()
    if not candidates:
        raise EmptyGrid()
    prior_mean = float(np.mean(utilities))

    raw: Dict[Tuple, np.ndarray] = {}
    for spec, _ in candidates:
        if spec.distance_key not in raw:
            raw[spec.distance_key] = distance_matrix(spec, coalitions, coalitions, distances, executor)

    def matrix_key(spec):
        return spec.distance_key, spec.gamma, spec.exponent

    def is_psd(spec):
        return psd_check(kernel_from_distances(spec, raw[spec.distance_key])).passed

    # an indefinite kernel gives negative posterior variances, whatever its likelihood
    unique = list({matrix_key(spec): spec for spec, _ in candidates}.values())
    verdicts = list(executor.map(is_psd, unique)) if executor is not None else [is_psd(spec) for spec in unique]
    admissible = {matrix_key(spec) for spec, passed in zip(unique, verdicts) if passed}
    screened = [c for c in candidates if matrix_key(c[0]) in admissible]
    if len(screened) < len(candidates):
        logger.info(f"Dropped {len(candidates) - len(screened)} grid candidates whose kernel matrix is not PSD")
    if not screened:
        raise FactorizationFailure(f"no grid candidate gives a PSD kernel matrix on {len(coalitions)} coalitions")

    def score(candidate):
        spec, noise_var = candidate
        matrix = kernel_from_distances(spec, raw[spec.distance_key])
        try:
            return _condition_on(spec, noise_var, coalitions, utilities, prior_mean, matrix, jitter_ladder)
        except FactorizationFailure as exc:
            logger.debug(f"Skipping {spec.describe()} noise={noise_var}: {exc}")
            return None

    models = list(executor.map(score, screened)) if executor is not None else [score(c) for c in screened]

    best = None
    for model in models:
        if model is None:
            continue
        if best is None or (model.log_likelihood, model.noise_var) > (best.log_likelihood, best.noise_var):
            best = model
    if best is None:
        raise FactorizationFailure(f"no grid candidate could be factorized on {len(coalitions)} coalitions")

    logger.info(
        f"GP fit on {len(coalitions)} coalitions over {len(candidates)} candidates: "
        f"{best.spec.describe()} noise={best.noise_var:g} log-likelihood={best.log_likelihood:.4f}"
    )
    return best


def variance_floor(model: GPModel) -> float:
    if model.effective_noise <= 0:
        return VARIANCE_FLOOR
    return max(VARIANCE_FLOOR, model.n_train * float(np.finfo(np.float64).eps) / model.effective_noise)


def predict(model: GPModel, coalitions: Sequence[Coalition], distances: CoalitionDistances, executor=None) -> Posterior:
    coalitions = tuple(coalitions)
    if not coalitions:
        return Posterior((), np.zeros(0), np.zeros((0, 0)))

    cross = build_matrix(model.spec, coalitions, model.coalitions, distances, executor).entries
    prior = build_matrix(model.spec, coalitions, coalitions, distances, executor).entries

    mean = model.prior_mean + cross @ model.alpha
    solved = linalg.solve_triangular(model.chol, cross.T, lower=True)
    cov = prior - solved.T @ solved
    cov = (cov + cov.T) / 2

    variances = np.diag(cov)
    if variances.min() < -variance_floor(model):
        raise PosteriorInconsistency(f"posterior variance {variances.min():.3e} is negative")
    np.fill_diagonal(cov, np.clip(variances, 0.0, None))
    for array in (mean, cov):
        array.setflags(write=False)
    return Posterior(coalitions, mean, cov)


def log_marginal_likelihood(model: GPModel) -> float:
    return model.log_likelihood
