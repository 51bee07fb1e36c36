"""Logistic regression by Newton-Raphson, for propensity and outcome models.

The iteration itself runs in the active kernel backend (see ``_backend``):
start at beta = 0, step halving on likelihood decrease, stop when
max |step| < 1e-10 or max |score| < 1e-8, at most 100 iterations. Linear
solves use a diagonally pivoted Cholesky factorization of the Fisher
information; a pivot below 1e-12 times the largest pivot means the
information is singular.

Under the default ``separation="strict"`` policy a fit is declared
quasi-separated when it fails to converge, any coefficient exceeds 30 in
magnitude, or any fitted probability is within 1e-8 of 0 or 1.

``separation="lenient"`` mirrors common GLM software: iteration also stops
once the relative change in log-likelihood drops below 1e-8, and only fitted
probabilities that are exactly 0 or 1 (or non-convergence) are errors. Fits
that the strict rule would reject come back with ``separation_flag`` set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _backend
from .data import DesignMatrix
from .errors import DimensionMismatch, NoVariation, QuasiSeparation, SingularInformation

SEPARATION_POLICIES = ("strict", "lenient")
SEP_PROB = 1e-8
SEP_BETA = 30.0


@dataclass(frozen=True, eq=False)
class LogisticFit:
    beta: np.ndarray
    fitted: np.ndarray
    iterations: int
    converged: bool
    separation_flag: bool


def _as_array(dm) -> np.ndarray:
    values = dm.values if isinstance(dm, DesignMatrix) else dm
    return np.ascontiguousarray(values, dtype=float)


def lenient_flag(separation: str) -> int:
    if separation not in SEPARATION_POLICIES:
        raise ValueError(f"separation policy must be one of {SEPARATION_POLICIES}")
    return int(separation == "lenient")


def fit_logistic(dm, target, separation: str = "strict") -> LogisticFit:
    """Maximum-likelihood logistic regression of ``target`` on the design ``dm``.

    Raises:
        NoVariation: target is all 0 or all 1.
        SingularInformation: Fisher information is (numerically) singular.
        QuasiSeparation: see module docstring.
    """
    X = _as_array(dm)
    t = np.ascontiguousarray(target, dtype=float)
    if X.ndim != 2 or X.shape[0] != t.shape[0]:
        raise DimensionMismatch(f"design has {X.shape[0]} rows, target has {t.shape[0]}")
    beta, iterations, status = _backend.fit_logistic(X, t, None, lenient_flag(separation))
    if status == _backend.ST_NOVAR:
        raise NoVariation("target is constant")
    if status == _backend.ST_SINGULAR:
        raise SingularInformation(f"Fisher information singular (iteration {iterations})")
    if status == _backend.ST_NONCONV:
        raise QuasiSeparation(f"no convergence after {iterations} iterations")
    if status == _backend.ST_QUASI:
        raise QuasiSeparation("fitted probabilities at 0/1 or coefficients diverging")
    beta = np.asarray(beta, dtype=float)
    beta.setflags(write=False)
    fitted = expit(X @ beta)
    fitted.setflags(write=False)
    flagged = bool(np.max(np.abs(beta), initial=0.0) > SEP_BETA
                   or np.any(fitted <= SEP_PROB) or np.any(fitted >= 1.0 - SEP_PROB))
    return LogisticFit(beta, fitted, int(iterations), True, flagged)


def predict_probs(fit: LogisticFit | np.ndarray, dm) -> np.ndarray:
    beta = fit.beta if isinstance(fit, LogisticFit) else np.asarray(fit, dtype=float)
    X = _as_array(dm)
    if X.ndim != 2 or X.shape[1] != beta.shape[0]:
        raise DimensionMismatch(f"design has {X.shape[-1]} columns, beta has {beta.shape[0]}")
    return expit(X @ beta)


def score(dm, target, beta) -> np.ndarray:
    """Gradient of the log-likelihood, sum_i (t_i - p_i) x_i."""
    X = _as_array(dm)
    return X.T @ (np.asarray(target, dtype=float) - expit(X @ np.asarray(beta)))
