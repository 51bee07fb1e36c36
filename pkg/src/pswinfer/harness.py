"""Monte Carlo experiment runner.

A scenario is one (n, pz, py0) cell. Each repetition draws a stratified
subsample from the cell's super-population, fits the propensity score once
per estimand, and evaluates every configured variance method and interval
on it. Repetition ``r`` of scenario ``s`` draws from
``rng.stream(seed, s, r, ...)`` so results do not depend on how repetitions
are spread over workers.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

from . import dgp, rng
from .bootstrap import (
    BootstrapPlan,
    FittedEstimate,
    PointEstimator,
    PSMode,
    Strategy,
    bootstrap_distribution,
    bootstrap_se,
    default_workers,
    jackknife_estimates,
)
from .ci import CIMethod, ci_basic, ci_bca, ci_percentile, ci_wald
from .data import Dataset, design_matrix
from .errors import (
    RECOVERABLE_FIT_ERRORS,
    ExcessiveFailures,
    ExcessiveRepFailures,
    InvalidGrid,
    InvalidMethod,
    PSWError,
    StratumExhausted,
    TooFewReps,
)
from .estimators import WeightScheme
from .sandwich import (
    build_stack,
    variance_fixed,
    variance_ms_ate,
    variance_numeric,
    variance_pes_ate,
)

GRID_N = (100, 150, 200, 300, 500, 750, 1000)
GRID_PZ = (0.1, 0.2, 0.3, 0.4, 0.5)
GRID_PY0 = (0.1, 0.2, 0.3, 0.4, 0.5)
GRID_EXCLUSIONS = ((100, 0.1), (150, 0.1), (100, 0.2))
MAX_REP_FAILURE_RATE = 0.05
LEVEL = 0.95

ANALYTIC = ("fs", "ms", "pes", "ns")
BOOTSTRAP = {
    "boot-std-fixed": (Strategy.STANDARD, PSMode.FIXED),
    "boot-strat-fixed": (Strategy.STRATIFIED, PSMode.FIXED),
    "boot-std-est": (Strategy.STANDARD, PSMode.REESTIMATED),
    "boot-strat-est": (Strategy.STRATIFIED, PSMode.REESTIMATED),
}
VARIANCE_METHODS = ANALYTIC + tuple(BOOTSTRAP)
_STRATEGY_CODE = {Strategy.STANDARD: 0, Strategy.STRATIFIED: 1}

METRIC_COLUMNS = ("scenario_id", "n", "pz", "py0", "estimand", "method", "mean_se",
                  "empirical_sd", "se_ratio", "coverage", "mean_width", "sd_se",
                  "mcse_mean_se", "rep_failures", "boot_failure_rate")
REP_COLUMNS = ("scenario_id", "rep", "estimand", "method", "point", "se", "ci_lo", "ci_hi",
               "covered")


@dataclass(frozen=True)
class MethodSpec:
    """A variance estimator paired with an interval construction."""

    variance: str
    ci: str = "wald"

    def __post_init__(self):
        if self.variance not in VARIANCE_METHODS:
            raise InvalidMethod(f"unknown variance method {self.variance!r}; "
                                f"choose from {', '.join(VARIANCE_METHODS)}")
        CIMethod(self.ci)
        if self.ci != "wald" and not self.is_bootstrap:
            raise InvalidMethod(f"{self.ci} intervals need a bootstrap variance method, "
                                f"not {self.variance!r}")

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        """``"ns"`` or ``"boot-std-est/pct"``."""
        var, _, ci = text.strip().partition("/")
        try:
            return cls(var, ci or "wald")
        except ValueError:
            raise InvalidMethod(f"unknown interval {ci!r} in {text!r}") from None

    @property
    def is_bootstrap(self) -> bool:
        return self.variance in BOOTSTRAP

    @property
    def label(self) -> str:
        return f"{self.variance}/{self.ci}"

    def supports(self, scheme: WeightScheme, augmented: bool) -> bool:
        """MS and PES closed forms exist only for the unaugmented IPTW estimator."""
        if self.variance in ("ms", "pes"):
            return scheme is WeightScheme.IPTW and not augmented
        return True


@dataclass(frozen=True)
class Scenario:
    scenario_id: int
    n: int
    pz: float
    py0: float
    reps: int = 1000
    B: int = 500
    methods: tuple[MethodSpec, ...] = ()
    estimands: tuple[str, ...] = ("ATE",)
    separation: str = "lenient"

    @property
    def n_treated(self) -> int:
        return treated_count(self.n, self.pz)


def treated_count(n: int, pz: float) -> int:
    """round(n * pz), ties to even."""
    return int(round(n * pz))


def scenario_grid(ns: Sequence[int] = GRID_N, pzs: Sequence[float] = GRID_PZ,
                  py0s: Sequence[float] = GRID_PY0,
                  exclude: Iterable[tuple[int, float]] = GRID_EXCLUSIONS,
                  reps: int = 1000, B: int = 500, methods: Sequence[MethodSpec] = (),
                  estimands: Sequence[str] = ("ATE",),
                  separation: str = "lenient") -> list[Scenario]:
    """Full cross of n x pz x py0 minus excluded (n, pz) pairs."""
    if not len(ns) or not len(pzs) or not len(py0s):
        raise InvalidGrid("every grid axis needs at least one value")
    for n in ns:
        if int(n) != n or n < 4:
            raise InvalidGrid(f"sample size {n} must be an integer >= 4")
    for p in (*pzs, *py0s):
        if not 0.0 < p < 1.0:
            raise InvalidGrid(f"grid probability {p} outside (0, 1)")
    excluded = {(int(n), round(float(p), 12)) for n, p in exclude}
    out = []
    for n in ns:
        for pz in pzs:
            if (int(n), round(float(pz), 12)) in excluded:
                continue
            nt = treated_count(int(n), pz)
            if nt < 1 or nt >= n:
                raise InvalidGrid(f"n={n}, pz={pz} leaves an arm empty")
            for py0 in py0s:
                out.append(Scenario(len(out), int(n), float(pz), float(py0), reps, B,
                                    tuple(methods), tuple(estimands), separation))
    if not out:
        raise InvalidGrid("every grid cell is excluded")
    return out


def aipw_grid(**kw) -> list[Scenario]:
    """Augmented-estimator grid: n from 150 and pz = 0.1 dropped."""
    return scenario_grid(ns=GRID_N[1:], pzs=GRID_PZ[1:], exclude=(), **kw)


def stratified_subsample(sp: dgp.SuperPopulation, n: int, pz: float,
                         gen: np.random.Generator) -> Dataset:
    """Exactly round(n * pz) treated and the rest controls, without replacement."""
    nt = treated_count(n, pz)
    treated = np.flatnonzero(sp.z == 1)
    control = np.flatnonzero(sp.z != 1)
    if nt > treated.size or n - nt > control.size:
        raise StratumExhausted(f"need {nt} treated / {n - nt} controls; population has "
                               f"{treated.size} / {control.size}")
    idx = np.concatenate([gen.choice(treated, nt, replace=False),
                          gen.choice(control, n - nt, replace=False)])
    z = sp.z[idx]
    y = np.where(z == 1, sp.y1[idx], sp.y0[idx])
    return Dataset(y, z, sp.x[idx], sp.covariate_names)


# ---------------------------------------------------------------------------
# evaluating methods on one dataset


@dataclass
class MethodResult:
    method: MethodSpec
    point: float
    se: float
    ci_lo: float
    ci_hi: float
    p_value: float | None = None
    boot_failure_rate: float | None = None
    boot_failures: int | None = None


def _sandwich_se(d: Dataset, fitted: FittedEstimate, variance: str) -> float:
    est = fitted.estimator
    X = design_matrix(d, est.ps_covariates)
    if variance == "ms":
        return variance_ms_ate(d, fitted.e_hat, X).se
    if variance == "pes":
        return variance_pes_ate(d, fitted.e_hat, X).se
    if variance == "fs" and not est.augmented:
        return variance_fixed(d, fitted.e_hat, scheme=est.scheme).se
    spec = build_stack(d, X, est.scheme, fitted.ps_fit.beta, fitted.outcome,
                       est.outcome_design(d), ps_fixed=(variance == "fs"))
    return variance_numeric(spec).se


def evaluate_methods(d: Dataset, estimator: PointEstimator, methods: Sequence[MethodSpec],
                     B: int = 500, seed: int = 0, key: Sequence[int] = (),
                     fitted: FittedEstimate | None = None, level: float = LEVEL,
                     workers: int | None = None) -> list[MethodResult | PSWError]:
    """Point estimate, SE and interval for each method; failures come back as errors.

    Bootstrap methods sharing a resampling strategy use the same replicate
    indices (fixed and re-estimated PS differ only in the refit), and each
    (strategy, PS mode) distribution is computed once for all its intervals.
    """
    if fitted is None:
        fitted = estimator.fit(d)
    point = fitted.point
    dists: dict = {}
    jack: dict = {}
    out: list[MethodResult | PSWError] = []
    for m in methods:
        try:
            if not m.supports(estimator.scheme, estimator.augmented):
                raise InvalidMethod(f"{m.variance} is defined only for the unaugmented ATE")
            if not m.is_bootstrap:
                se = _sandwich_se(d, fitted, m.variance)
                ci = ci_wald(point, se, level)
                out.append(MethodResult(m, point, se, ci.lower, ci.upper, ci.p_value))
                continue
            strategy, ps_mode = BOOTSTRAP[m.variance]
            if (strategy, ps_mode) not in dists:
                plan = BootstrapPlan(B, strategy, ps_mode, seed=seed)
                try:
                    dists[strategy, ps_mode] = bootstrap_distribution(
                        d, plan, estimator, fitted,
                        key=(*key, rng.STREAM_BOOT, _STRATEGY_CODE[strategy]), workers=workers)
                except ExcessiveFailures as err:
                    dists[strategy, ps_mode] = err
            dist = dists[strategy, ps_mode]
            if isinstance(dist, PSWError):
                raise dist
            se = bootstrap_se(dist)
            if m.ci == "wald":
                ci = ci_wald(point, se, level)
            elif m.ci == "pct":
                ci = ci_percentile(dist, level)
            elif m.ci == "basic":
                ci = ci_basic(point, dist, level)
            else:
                if ps_mode not in jack:
                    jack[ps_mode] = jackknife_estimates(d, estimator, ps_mode, fitted, workers)
                ci = ci_bca(point, dist, jack[ps_mode], level)
            out.append(MethodResult(m, point, se, ci.lower, ci.upper, ci.p_value,
                                    dist.failure_rate, dist.n_failures))
        except PSWError as err:
            out.append(err)
    return out


# ---------------------------------------------------------------------------
# repetitions


@dataclass(frozen=True)
class Augmentation:
    """Outcome model for augmented estimators.

    ``benchmark="unaugmented"`` measures the empirical SD against the plain
    weighting estimator computed on the same subsamples.
    """

    covariates: tuple[str, ...] = dgp.CORRECT_OUTCOME_COVARIATES
    per_arm: bool = False
    benchmark: str = "unaugmented"


@dataclass
class RepRow:
    scenario_id: int
    rep: int
    estimand: str
    method: str
    point: float
    se: float
    ci_lo: float
    ci_hi: float
    covered: bool
    benchmark_point: float
    boot_failure_rate: float | None = None


@dataclass
class RepOutcome:
    rep: int
    rows: list[RepRow]
    failed: dict[tuple[str, str], str]  # (estimand, method) -> error class


def run_rep(sp: dgp.SuperPopulation, sc: Scenario, seed: int, rep: int,
            augmentation: Augmentation | None = None, truths: dict | None = None) -> RepOutcome:
    truths = truths or _truths(sp)
    d = stratified_subsample(sp, sc.n, sc.pz, rng.stream(seed, sc.scenario_id, rep,
                                                         rng.STREAM_SUBSAMPLE))
    rows: list[RepRow] = []
    failed: dict[tuple[str, str], str] = {}
    for ei, estimand in enumerate(sc.estimands):
        scheme = WeightScheme.for_estimand(estimand)
        plain = PointEstimator(scheme, separation=sc.separation)
        est = plain if augmentation is None else PointEstimator(
            scheme, outcome_covariates=tuple(augmentation.covariates),
            per_arm=augmentation.per_arm, separation=sc.separation)
        methods = [m for m in sc.methods if m.supports(scheme, est.augmented)]
        try:
            fitted = est.fit(d)
            bench = fitted.point
            if est.augmented and augmentation.benchmark == "unaugmented":
                bench = plain.fit(d).point
        except RECOVERABLE_FIT_ERRORS as err:
            for m in methods:
                failed[estimand, m.label] = type(err).__name__
            continue
        results = evaluate_methods(d, est, methods, sc.B, seed, (sc.scenario_id, rep, ei),
                                   fitted, workers=1)
        for m, res in zip(methods, results):
            if isinstance(res, PSWError):
                failed[estimand, m.label] = type(res).__name__
                continue
            truth = truths[estimand]
            rows.append(RepRow(sc.scenario_id, rep, estimand, m.label, res.point, res.se,
                               res.ci_lo, res.ci_hi, res.ci_lo <= truth <= res.ci_hi, bench,
                               res.boot_failure_rate))
    return RepOutcome(rep, rows, failed)


def _truths(sp: dgp.SuperPopulation) -> dict[str, float]:
    c = sp.calibration
    if c is not None and math.isfinite(c.true_ate):
        return {"ATE": c.true_ate, "ATO": c.true_ato}
    ate, ato = dgp.true_estimands(sp)
    return {"ATE": ate, "ATO": ato}


# worker-process state, installed once per process
_WORKER: dict = {}


def _init_worker(sp, sc, seed, augmentation, truths):
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    _WORKER.update(sp=sp, sc=sc, seed=seed, augmentation=augmentation, truths=truths)


def _run_block(reps: Sequence[int]) -> list[RepOutcome]:
    w = _WORKER
    return [run_rep(w["sp"], w["sc"], w["seed"], r, w["augmentation"], w["truths"]) for r in reps]


@dataclass
class ScenarioResult:
    scenario: Scenario
    metrics: list[dict]
    rows: list[RepRow]
    rep_failures: dict[tuple[str, str], int] = field(default_factory=dict)


def run_scenario(sp: dgp.SuperPopulation, sc: Scenario, seed: int,
                 augmentation: Augmentation | None = None, workers: int | None = None,
                 max_rep_failure_rate: float = MAX_REP_FAILURE_RATE) -> ScenarioResult:
    """All repetitions of one scenario, then per-method aggregates.

    A repetition whose propensity (or outcome) model cannot be fitted is
    skipped for that estimand and counted; a method that fails on a
    repetition is skipped for that method only. More than 5% of repetitions
    lost for any (estimand, method) raises ExcessiveRepFailures.
    """
    workers = default_workers() if workers is None else workers
    truths = _truths(sp)
    reps = list(range(sc.reps))
    if workers <= 1 or sc.reps < 2:
        outcomes = [run_rep(sp, sc, seed, r, augmentation, truths) for r in reps]
    else:
        blocks = [b.tolist() for b in np.array_split(np.array(reps), min(workers * 4, sc.reps))]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(sp, sc, seed, augmentation, truths)) as pool:
            outcomes = [o for part in pool.map(_run_block, blocks) for o in part]
    outcomes.sort(key=lambda o: o.rep)

    rows = [row for o in outcomes for row in o.rows]
    failures: dict[tuple[str, str], int] = {}
    for o in outcomes:
        for k in o.failed:
            failures[k] = failures.get(k, 0) + 1
    worst = max(failures.values(), default=0)
    if worst > max_rep_failure_rate * sc.reps:
        raise ExcessiveRepFailures(
            f"scenario {sc.scenario_id} (n={sc.n}, pz={sc.pz}, py0={sc.py0}): "
            f"{worst} of {sc.reps} repetitions failed: {failures}")

    metrics = []
    for estimand in sc.estimands:
        scheme = WeightScheme.for_estimand(estimand)
        for m in sc.methods:
            if not m.supports(scheme, augmentation is not None):
                continue
            sel = [r for r in rows if r.estimand == estimand and r.method == m.label]
            nfail = failures.get((estimand, m.label), 0)
            try:
                agg = aggregate_metrics(sel, truths[estimand],
                                        use_benchmark=augmentation is not None
                                        and augmentation.benchmark == "unaugmented")
            except TooFewReps:
                agg = {k: None for k in METRIC_COLUMNS[6:14]}
            agg.update(scenario_id=sc.scenario_id, n=sc.n, pz=sc.pz, py0=sc.py0,
                       estimand=estimand, method=m.label, rep_failures=nfail)
            metrics.append(agg)
    return ScenarioResult(sc, metrics, rows, failures)


def _sd(v: np.ndarray) -> float:
    return 0.0 if np.all(v == v[0]) else float(np.std(v, ddof=1))


def aggregate_metrics(rows: Sequence[RepRow], truth: float, use_benchmark: bool = False,
                      level: float = LEVEL) -> dict:
    """Per-method summaries; undefined quantities are ``None``, never NaN.

    ``empirical_sd`` is the SD (denominator reps - 1) of the point estimates,
    or of ``benchmark_point`` when ``use_benchmark`` is set.
    """
    del truth  # coverage is recorded per row
    if not rows:
        raise TooFewReps("no successful repetitions to aggregate")
    se = np.array([r.se for r in rows])
    pts = np.array([r.benchmark_point if use_benchmark else r.point for r in rows])
    width = np.array([r.ci_hi - r.ci_lo for r in rows])
    k = len(rows)
    mean_se = float(se.mean())
    emp = _sd(pts) if k >= 2 else None
    sd_se = _sd(se) if k >= 2 else None
    boot = [r.boot_failure_rate for r in rows if r.boot_failure_rate is not None]
    return {
        "mean_se": mean_se,
        "empirical_sd": emp,
        "se_ratio": mean_se / emp if emp else None,
        "coverage": float(np.mean([r.covered for r in rows])),
        "mean_width": float(width.mean()),
        "sd_se": sd_se,
        "mcse_mean_se": sd_se / math.sqrt(k) if sd_se is not None else None,
        "boot_failure_rate": float(np.mean(boot)) if boot else None,
    }


def wald_multiplier(level: float = LEVEL) -> float:
    return float(ndtri(0.5 + level / 2.0))


# ---------------------------------------------------------------------------
# output


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv_text(metrics: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in metrics:
        w.writerow([_cell(m.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def reps_csv_text(rows: Iterable[RepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REP_COLUMNS)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in REP_COLUMNS])
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    """Parse metrics.csv back; empty cells become ``None``."""
    out = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            row: dict = {}
            for k, v in rec.items():
                if k in ("estimand", "method"):
                    row[k] = v
                elif v == "":
                    row[k] = None
                elif k in ("scenario_id", "n", "rep_failures"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            out.append(row)
    return out


# ---------------------------------------------------------------------------
# whole simulations


def population_for(pz: float, py0: float, seed: int, N: int = dgp.DEFAULT_N,
                   direction: str = "above", cache_dir: Path | None = None,
                   x: np.ndarray | None = None) -> dgp.SuperPopulation:
    """Calibrated super-population of one (pz, py0) cell, cached on disk when asked.

    All cells of a run share covariates (seed, N, direction) and differ in
    their calibration and in the realization stream ``dgp.cell_key(pz, py0)``.
    """
    path = None
    if cache_dir is not None:
        kz, ky = dgp.cell_key(pz, py0)  # integer keys: no dots for with_suffix to eat
        path = Path(cache_dir) / f"sp_seed{seed}_N{N}_{direction}_pz{kz}_py0{ky}"
        if path.with_suffix(".npz").exists() and path.with_suffix(".json").exists():
            return dgp.load_superpopulation(path)
    sp = dgp.build_superpopulation(pz, py0, seed, N, direction=direction, x=x)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        dgp.save_superpopulation(sp, path)
    return sp


def run_simulation(scenarios: Sequence[Scenario], seed: int, N: int = dgp.DEFAULT_N,
                   direction: str = "above", augmentation: Augmentation | None = None,
                   cache_dir: Path | None = None, workers: int | None = None,
                   progress=None) -> tuple[list[dict], list[RepRow]]:
    """Run every scenario; returns (metrics rows, per-rep rows) in scenario order.

    ``progress(result)`` is called after each scenario.
    """
    metrics: list[dict] = []
    rows: list[RepRow] = []
    pops: dict[tuple[float, float], dgp.SuperPopulation] = {}
    x = None
    for sc in scenarios:
        cell = (sc.pz, sc.py0)
        if cell not in pops:
            if x is None and cache_dir is None:
                x = dgp.generate_covariates(N, seed, direction)
            pops.clear()
            pops[cell] = population_for(sc.pz, sc.py0, seed, N, direction, cache_dir, x)
        res = run_scenario(pops[cell], sc, seed, augmentation, workers)
        metrics.extend(res.metrics)
        rows.extend(res.rows)
        if progress is not None:
            progress(res)
    return metrics, rows
