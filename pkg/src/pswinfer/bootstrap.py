"""Bootstrap standard errors: {standard, stratified} resampling x {fixed, re-estimated} PS.

Replicate ``b`` draws its indices from ``rng.stream(seed, *key, b)`` so the
estimates vector depends only on (seed, key, plan, data). Replicates are
evaluated by the compiled kernel in contiguous chunks that may run on a
thread pool; results are written back by replicate index.

Failed replicates (quasi-separation, singular information, constant
outcome, an empty arm) are dropped and tallied; more than 10% failures is an
error.
"""

from __future__ import annotations

import enum
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend, rng
from .data import Dataset, design_matrix
from .errors import EmptyArm, ExcessiveFailures, InvalidMethod, TooFewReplicates
from .estimators import (
    OutcomePair,
    WeightScheme,
    augmented_point,
    compute_weights,
    fit_outcome_models,
    outcome_design,
    wate_point,
)
from .glm import LogisticFit, fit_logistic, lenient_flag

MAX_FAILURE_RATE = 0.10
DEFAULT_B = 1000


class Strategy(enum.Enum):
    STANDARD = "std"
    STRATIFIED = "strat"


class PSMode(enum.Enum):
    FIXED = "fixed"
    REESTIMATED = "est"


class OutcomeModelMode(enum.Enum):
    NONE = "none"
    REFIT = "refit"


@dataclass(frozen=True)
class BootstrapPlan:
    B: int = DEFAULT_B
    strategy: Strategy = Strategy.STANDARD
    ps_mode: PSMode = PSMode.REESTIMATED
    outcome_model_mode: OutcomeModelMode = OutcomeModelMode.NONE
    seed: int = 0

    def __post_init__(self):
        if self.B < 2:
            raise ValueError("B must be at least 2")

    @property
    def label(self) -> str:
        return f"{self.strategy.value}B-{'Est' if self.ps_mode is PSMode.REESTIMATED else 'Fixed'}"


@dataclass(frozen=True)
class PointEstimator:
    """What to estimate: weighting scheme, PS covariates, optional outcome model.

    ``ps_covariates=None`` uses every covariate. ``outcome_covariates=None``
    means no augmentation; a (possibly empty) tuple turns augmentation on.
    ``separation`` is the quasi-separation policy for every logistic fit,
    including those inside bootstrap replicates (see :mod:`pswinfer.glm`).
    """

    scheme: WeightScheme = WeightScheme.IPTW
    ps_covariates: tuple[str, ...] | None = None
    outcome_covariates: tuple[str, ...] | None = None
    per_arm: bool = False
    separation: str = "strict"

    @property
    def augmented(self) -> bool:
        return self.outcome_covariates is not None

    def ps_design(self, d: Dataset) -> np.ndarray:
        return design_matrix(d, self.ps_covariates).values

    def outcome_design(self, d: Dataset) -> np.ndarray | None:
        if not self.augmented:
            return None
        return outcome_design(d, self.outcome_covariates, self.per_arm)

    def fit(self, d: Dataset) -> "FittedEstimate":
        d.require_both_arms()
        X = self.ps_design(d)
        ps = fit_logistic(X, d.z, self.separation)
        e = np.asarray(ps.fitted)
        om = None
        if self.augmented:
            om = fit_outcome_models(d, self.outcome_covariates, self.per_arm, self.separation)
            point = augmented_point(d, e, self.scheme, om)
        else:
            point = wate_point(d.y, d.z, compute_weights(e, d.z, self.scheme))
        return FittedEstimate(self, ps, e, om, point)


@dataclass(frozen=True, eq=False)
class FittedEstimate:
    estimator: PointEstimator
    ps_fit: LogisticFit
    e_hat: np.ndarray
    outcome: OutcomePair | None
    point: float


@dataclass
class BootstrapDistribution:
    estimates: np.ndarray
    failures: dict[str, int] = field(default_factory=dict)
    B_requested: int = 0

    @property
    def n_failures(self) -> int:
        return int(sum(self.failures.values()))

    @property
    def failure_rate(self) -> float:
        return self.n_failures / self.B_requested if self.B_requested else 0.0


def resample_indices(n: int, z, strategy: Strategy, gen: np.random.Generator) -> np.ndarray:
    """One bootstrap sample of row indices (length n)."""
    if strategy is Strategy.STANDARD:
        return gen.integers(0, n, size=n)
    z = np.asarray(z)
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z != 1)
    if treated.size == 0 or control.size == 0:
        raise EmptyArm("stratified resampling needs both arms")
    return np.concatenate([treated[gen.integers(0, treated.size, size=treated.size)],
                           control[gen.integers(0, control.size, size=control.size)]])


def replicate_index_matrix(d: Dataset, plan: BootstrapPlan, key: Sequence[int] = ()) -> np.ndarray:
    idx = np.empty((plan.B, d.n), dtype=np.int64)
    for b in range(plan.B):
        idx[b] = resample_indices(d.n, d.z, plan.strategy, rng.stream(plan.seed, *key, b))
    return idx


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PSWINFER_WORKERS", "1")))
    except ValueError:
        return 1


def evaluate_replicates(d: Dataset, estimator: PointEstimator, e_carried, idx: np.ndarray,
                        reestimate: bool, workers: int | None = None):
    """Point estimate on every row-index sample in ``idx``; returns (estimates, status)."""
    workers = default_workers() if workers is None else workers
    X = np.ascontiguousarray(estimator.ps_design(d))
    z = np.ascontiguousarray(d.z, dtype=float)
    y = np.ascontiguousarray(d.y, dtype=float)
    e = np.ascontiguousarray(e_carried, dtype=float)
    V = estimator.outcome_design(d)
    if V is None:
        mode, V = 0, np.zeros((d.n, 1))
    else:
        mode = 2 if estimator.per_arm else 1
    V = np.ascontiguousarray(V, dtype=float)
    overlap = int(estimator.scheme is WeightScheme.OVERLAP)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    lenient = lenient_flag(estimator.separation)

    def run(chunk):
        return _backend.replicate_estimates(X, z, y, e, chunk, overlap, int(reestimate), mode, V, 1,
                                            lenient)

    if workers <= 1 or idx.shape[0] < 2 * workers:
        return run(idx)
    chunks = np.array_split(idx, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def _tally(status: np.ndarray) -> dict[str, int]:
    counts = Counter(_backend.STATUS_NAMES[int(s)] for s in status if s != _backend.ST_OK)
    return dict(sorted(counts.items()))


def bootstrap_distribution(d: Dataset, plan: BootstrapPlan, estimator: PointEstimator,
                           fitted: FittedEstimate | None = None, key: Sequence[int] = (),
                           workers: int | None = None,
                           max_failure_rate: float = MAX_FAILURE_RATE) -> BootstrapDistribution:
    """B replicate point estimates.

    With ``PSMode.FIXED`` resampled subjects carry their original fitted
    propensity score; the PS model is fitted once on ``d`` (or taken from
    ``fitted``) and never again. Augmented estimators always refit the
    outcome model within each replicate.
    """
    if estimator.augmented and plan.outcome_model_mode is OutcomeModelMode.NONE:
        plan = BootstrapPlan(plan.B, plan.strategy, plan.ps_mode, OutcomeModelMode.REFIT, plan.seed)
    if not estimator.augmented and plan.outcome_model_mode is OutcomeModelMode.REFIT:
        raise InvalidMethod("outcome refit requested for an unaugmented estimator")
    if fitted is None:
        fitted = estimator.fit(d)
    idx = replicate_index_matrix(d, plan, key)
    est, status = evaluate_replicates(d, estimator, fitted.e_hat, idx,
                                      plan.ps_mode is PSMode.REESTIMATED, workers)
    dist = BootstrapDistribution(est[status == _backend.ST_OK], _tally(status), plan.B)
    if dist.n_failures > max_failure_rate * plan.B:
        err = ExcessiveFailures(
            f"{dist.n_failures} of {plan.B} bootstrap replicates failed: {dist.failures}")
        err.distribution = dist
        raise err
    return dist


def bootstrap_se(dist: BootstrapDistribution | np.ndarray) -> float:
    est = np.asarray(dist.estimates if isinstance(dist, BootstrapDistribution) else dist)
    if est.size < 2:
        raise TooFewReplicates("need at least two replicate estimates")
    if np.all(est == est[0]):
        return 0.0  # exact, np.std leaves roundoff
    return float(np.std(est, ddof=1))


def jackknife_estimates(d: Dataset, estimator: PointEstimator, ps_mode: PSMode,
                        fitted: FittedEstimate | None = None,
                        workers: int | None = None) -> np.ndarray:
    """Leave-one-out point estimates; failed deletions are dropped."""
    if fitted is None:
        fitted = estimator.fit(d)
    n = d.n
    full = np.arange(n, dtype=np.int64)
    idx = np.empty((n, n - 1), dtype=np.int64)
    for i in range(n):
        idx[i] = np.delete(full, i)
    est, status = evaluate_replicates(d, estimator, fitted.e_hat, idx,
                                      ps_mode is PSMode.REESTIMATED, workers)
    return est[status == _backend.ST_OK]
