"""Simulated super-population with calibrated treatment prevalence, control
event rate and risk-difference treatment effect.

Ten latent normals with pairwise correlation 0.2 give five continuous
covariates (x1..x5) and five binary ones (x6..x10) obtained by thresholding
at the empirical 10th..50th percentiles. Treatment and potential outcomes
follow logistic models with fixed log-odds-ratio coefficients; intercepts
and the treatment log-odds ratio are found by bisection.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import rng
from .errors import BracketFailure

N_COVARIATES = 10
CORRELATION = 0.2
DICHOTOMIZE_PERCENTILES = (10, 20, 30, 40, 50)
COVARIATE_NAMES = tuple(f"x{j}" for j in range(1, N_COVARIATES + 1))

TREATMENT_COEF = np.log([1.1, 1.2, 1.5, 1.75, 2.0, 1.25, 1.5, 2.0, 0.8, 0.5])
OUTCOME_COEF = np.log([2.0, 1.75, 1.1, 1.5, 1.2, 2.0, 1.5, 1.1, 1.25, 2.0])

CORRECT_OUTCOME_COVARIATES = COVARIATE_NAMES
MISSPECIFIED_OUTCOME_COVARIATES = ("x1", "x2", "x3", "x6", "x10")

TARGET_ATE = -0.02
BRACKET = (-10.0, 10.0)
MAX_BISECTION = 200
PREVALENCE_TOL = 1e-6
EFFECT_TOL = 1e-7
CHUNK = 100_000
DEFAULT_N = 1_000_000


def _chunks(N: int):
    for c, start in enumerate(range(0, N, CHUNK)):
        yield c, start, min(start + CHUNK, N)


def latent_normals(N: int, seed: int) -> np.ndarray:
    """N x 10 standard normals with constant pairwise correlation 0.2."""
    R = np.full((N_COVARIATES, N_COVARIATES), CORRELATION)
    np.fill_diagonal(R, 1.0)
    L = np.linalg.cholesky(R)
    V = np.empty((N, N_COVARIATES))
    for c, a, b in _chunks(N):
        g = rng.stream(seed, rng.STREAM_COVARIATES, c).standard_normal((b - a, N_COVARIATES))
        V[a:b] = g @ L.T
    return V


def dichotomize(v: np.ndarray, percentile: float, direction: str = "above") -> np.ndarray:
    """1 where v exceeds (``above``) or is at or below (``below``) its empirical percentile."""
    thr = np.percentile(v, percentile)
    if direction == "above":
        return (v > thr).astype(float)
    if direction == "below":
        return (v <= thr).astype(float)
    raise ValueError(f"unknown direction {direction!r}")


def generate_covariates(N: int, seed: int, direction: str = "above") -> np.ndarray:
    if N < 1000:
        raise ValueError("super-population needs N >= 1000")
    V = latent_normals(N, seed)
    X = V.copy()
    for j, pct in enumerate(DICHOTOMIZE_PERCENTILES):
        X[:, 5 + j] = dichotomize(V[:, 5 + j], pct, direction)
    return X


def bisect(f, target: float, tol: float, lo: float = BRACKET[0], hi: float = BRACKET[1],
           max_iter: int = MAX_BISECTION) -> float:
    """Root of increasing ``f(a) = target`` on [lo, hi], tolerance on |f - target|."""
    flo, fhi = f(lo) - target, f(hi) - target
    if flo > 0 or fhi < 0:
        raise BracketFailure(f"target {target} not bracketed by f({lo})={flo + target:.6g}, "
                             f"f({hi})={fhi + target:.6g}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid) - target
        if abs(fm) <= tol:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    raise BracketFailure(f"bisection did not reach tolerance {tol} in {max_iter} iterations")


def calibrate_treatment_intercept(x: np.ndarray, target_prevalence: float,
                                  coef: np.ndarray = TREATMENT_COEF,
                                  tol: float = PREVALENCE_TOL) -> float:
    if not 0.0 < target_prevalence < 1.0:
        raise BracketFailure("target prevalence must lie in (0, 1)")
    lin = x @ np.asarray(coef, dtype=float)
    return bisect(lambda a: float(np.mean(expit(a + lin))), target_prevalence, tol)


def calibrate_outcome(x: np.ndarray, target_py0: float, target_ate: float = TARGET_ATE,
                      coef: np.ndarray = OUTCOME_COEF) -> tuple[float, float]:
    """(alpha0_outcome, alpha_treat): first match mean p0, then mean(p1 - p0)."""
    if not 0.0 < target_py0 < 1.0:
        raise BracketFailure("target Pr(Y(0)=1) must lie in (0, 1)")
    lin = x @ np.asarray(coef, dtype=float)
    a0 = bisect(lambda a: float(np.mean(expit(a + lin))), target_py0, PREVALENCE_TOL)
    base = lin + a0
    p0_mean = float(np.mean(expit(base)))
    at = bisect(lambda a: float(np.mean(expit(base + a))) - p0_mean, target_ate, EFFECT_TOL)
    return a0, at


@dataclass
class CalibrationResult:
    alpha0_treat: float
    alpha0_outcome: float
    alpha_treat: float
    target_pz: float
    target_py0: float
    target_ate: float
    achieved_pz: float = float("nan")
    achieved_py0: float = float("nan")
    achieved_ate: float = float("nan")
    true_ate: float = float("nan")
    true_ato: float = float("nan")


def calibrate(x: np.ndarray, pz: float, py0: float, target_ate: float = TARGET_ATE) -> CalibrationResult:
    a_t = calibrate_treatment_intercept(x, pz)
    a0, at = calibrate_outcome(x, py0, target_ate)
    p_treat = expit(a_t + x @ TREATMENT_COEF)
    lin = a0 + x @ OUTCOME_COEF
    p1, p0 = expit(lin + at), expit(lin)
    res = CalibrationResult(a_t, a0, at, pz, py0, target_ate,
                            float(p_treat.mean()), float(p0.mean()), float(np.mean(p1 - p0)))
    if (abs(res.achieved_pz - pz) > 1e-4 or abs(res.achieved_py0 - py0) > 1e-4
            or abs(res.achieved_ate - target_ate) > 1e-5):
        raise BracketFailure(f"calibration residuals out of tolerance: {res}")
    return res


@dataclass(eq=False)
class SuperPopulation:
    x: np.ndarray
    p_treat: np.ndarray
    z: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    p1: np.ndarray
    p0: np.ndarray
    seed: int = 0
    key: tuple[int, ...] = ()
    calibration: CalibrationResult | None = None
    direction: str = "above"
    covariate_names: tuple[str, ...] = field(default=COVARIATE_NAMES)

    @property
    def N(self) -> int:
        return int(self.z.shape[0])

    @property
    def y(self) -> np.ndarray:
        return np.where(self.z == 1, self.y1, self.y0)

    def equals(self, other: "SuperPopulation") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("x", "p_treat", "z", "y1", "y0", "p1", "p0"))


def realize_population(x: np.ndarray, calib: CalibrationResult, seed: int,
                       direction: str = "above", key: tuple[int, ...] = ()) -> SuperPopulation:
    """Bernoulli draws of Z, Y(1), Y(0) from the calibrated models.

    ``key`` separates the draws of populations that share covariates.
    """
    p_treat = expit(calib.alpha0_treat + x @ TREATMENT_COEF)
    lin = calib.alpha0_outcome + x @ OUTCOME_COEF
    p1 = expit(lin + calib.alpha_treat)
    p0 = expit(lin)
    N = x.shape[0]
    z = np.empty(N)
    y1 = np.empty(N)
    y0 = np.empty(N)
    for c, a, b in _chunks(N):
        u = rng.stream(seed, rng.STREAM_REALIZE, *key, c).random((3, b - a))
        z[a:b] = u[0] < p_treat[a:b]
        y1[a:b] = u[1] < p1[a:b]
        y0[a:b] = u[2] < p0[a:b]
    return SuperPopulation(x, p_treat, z, y1, y0, p1, p0, seed, tuple(key), calib, direction)


def true_estimands(sp: SuperPopulation, expected: bool = False) -> tuple[float, float]:
    """(true ATE, true ATO) over the super-population.

    The ATO weights each subject by e(1 - e) with the true propensity score.
    ``expected=True`` uses event probabilities p1 - p0 instead of realized
    potential-outcome differences.
    """
    diff = (sp.p1 - sp.p0) if expected else (sp.y1 - sp.y0)
    omega = sp.p_treat * (1.0 - sp.p_treat)
    return float(np.mean(diff)), float(np.sum(omega * diff) / np.sum(omega))


def build_superpopulation(pz: float, py0: float, seed: int, N: int = DEFAULT_N,
                          target_ate: float = TARGET_ATE, direction: str = "above",
                          x: np.ndarray | None = None,
                          key: tuple[int, ...] | None = None) -> SuperPopulation:
    """Covariates, calibration, realization and true estimands in one call.

    Covariates depend only on (seed, N, direction) and may be passed in to
    share them across calibration cells. Realization draws use
    ``key = cell_key(pz, py0)`` unless given.
    """
    if x is None:
        x = generate_covariates(N, seed, direction)
    calib = calibrate(x, pz, py0, target_ate)
    sp = realize_population(x, calib, seed, direction, cell_key(pz, py0) if key is None else key)
    calib.true_ate, calib.true_ato = true_estimands(sp)
    return sp


def cell_key(pz: float, py0: float) -> tuple[int, int]:
    """Stream key of a (pz, py0) calibration cell (targets in millionths)."""
    return (int(round(pz * 1e6)), int(round(py0 * 1e6)))


_COLUMNS = ("p_treat", "z", "y1", "y0", "p1", "p0")


def _sp_paths(path) -> tuple[Path, Path]:
    # append rather than with_suffix: "pop_0.3" must not become "pop_0.npz"
    path = Path(path)
    base = str(path)[:-len(path.suffix)] if path.suffix in (".npz", ".json") else str(path)
    return Path(base + ".npz"), Path(base + ".json")


def save_superpopulation(sp: SuperPopulation, path) -> Path:
    """Write ``<path>.npz`` (one array per column) and ``<path>.json`` sidecar."""
    npz, sidecar = _sp_paths(path)
    cols = {name: sp.x[:, j] for j, name in enumerate(sp.covariate_names)}
    cols.update({name: getattr(sp, name) for name in _COLUMNS})
    np.savez(npz, **cols)
    meta = {
        "format": "pswinfer-superpopulation/1",
        "N": sp.N,
        "seed": sp.seed,
        "key": list(sp.key),
        "dichotomize_direction": sp.direction,
        "covariates": list(sp.covariate_names),
        "columns": list(cols),
        "calibration": asdict(sp.calibration) if sp.calibration else None,
        "rng": "numpy PCG64 via SeedSequence(seed, spawn_key=(tag, *key, chunk))",
        "chunk": CHUNK,
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return npz


def load_superpopulation(path) -> SuperPopulation:
    npz, sidecar = _sp_paths(path)
    meta = json.loads(sidecar.read_text())
    with np.load(npz) as f:
        x = np.column_stack([f[c] for c in meta["covariates"]])
        cols = {c: f[c] for c in _COLUMNS}
    calib = CalibrationResult(**meta["calibration"]) if meta.get("calibration") else None
    return SuperPopulation(x, seed=meta["seed"], key=tuple(meta.get("key", ())), calibration=calib,
                           direction=meta["dichotomize_direction"],
                           covariate_names=tuple(meta["covariates"]), **cols)


def export_csv(sp: SuperPopulation, path) -> None:
    header = ",".join([*sp.covariate_names, *_COLUMNS])
    data = np.column_stack([sp.x] + [getattr(sp, c) for c in _COLUMNS])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
