"""Balancing weights and point estimates (weighted and outcome-augmented)."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, design_matrix
from .errors import DegeneratePropensity, EmptyArm
from .glm import LogisticFit, fit_logistic, predict_probs


class WeightScheme(enum.Enum):
    IPTW = "iptw"    # targets the ATE
    OVERLAP = "overlap"  # targets the ATO

    def omega(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if self is WeightScheme.IPTW:
            return np.ones_like(e)
        return e * (1.0 - e)

    @property
    def estimand(self) -> str:
        return "ATE" if self is WeightScheme.IPTW else "ATO"

    @classmethod
    def for_estimand(cls, estimand: str) -> "WeightScheme":
        key = estimand.upper()
        if key == "ATE":
            return cls.IPTW
        if key == "ATO":
            return cls.OVERLAP
        raise ValueError(f"unknown estimand {estimand!r}")


def check_propensity(e_hat) -> np.ndarray:
    e = np.asarray(e_hat, dtype=float)
    if not np.all((e > 0.0) & (e < 1.0)):
        raise DegeneratePropensity("propensity scores must lie strictly inside (0, 1)")
    return e


def compute_weights(e_hat, z, scheme: WeightScheme) -> np.ndarray:
    """W_i = omega(e_i) / (z_i e_i + (1 - z_i)(1 - e_i))."""
    e = check_propensity(e_hat)
    z = np.asarray(z, dtype=float)
    return scheme.omega(e) / (z * e + (1.0 - z) * (1.0 - e))


def _arm_sums(z, w):
    treated = np.asarray(z) == 1
    s1 = w[treated].sum()
    s0 = w[~treated].sum()
    if not treated.any() or treated.all() or not (s1 > 0 and s0 > 0):
        raise EmptyArm("both arms need positive total weight")
    return treated, s1, s0


def wate_point(y, z, w) -> float:
    """Hajek ratio: weighted treated mean minus weighted control mean."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    treated, s1, s0 = _arm_sums(z, w)
    return float(np.dot(w[treated], y[treated]) / s1 - np.dot(w[~treated], y[~treated]) / s0)


@dataclass(frozen=True, eq=False)
class OutcomePair:
    """Predicted event probabilities with treatment set to 1 (m1) and 0 (m0)."""

    m1: np.ndarray
    m0: np.ndarray
    covariates: tuple[str, ...]
    per_arm: bool
    fits: tuple[LogisticFit, ...]

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([f.beta for f in self.fits])


def outcome_design(d: Dataset, covariates: Sequence[str], per_arm: bool = False) -> np.ndarray:
    """Outcome-model design: [1, Z, X_sub] for the single model, [1, X_sub] per arm."""
    base = design_matrix(d, covariates).values
    if per_arm:
        return np.ascontiguousarray(base)
    return np.ascontiguousarray(np.column_stack([base[:, :1], d.z, base[:, 1:]]))


def fit_outcome_models(d: Dataset, covariates: Sequence[str] | None = None,
                       per_arm: bool = False, separation: str = "strict") -> OutcomePair:
    """Logistic outcome model(s); Z enters as a main effect in the single model.

    With ``per_arm=True`` separate models are fit within each arm.
    """
    covariates = tuple(d.covariate_names if covariates is None else covariates)
    V = outcome_design(d, covariates, per_arm)
    if per_arm:
        treated = d.z == 1
        f1 = fit_logistic(V[treated], d.y[treated], separation)
        f0 = fit_logistic(V[~treated], d.y[~treated], separation)
        return OutcomePair(predict_probs(f1, V), predict_probs(f0, V), covariates, True, (f1, f0))
    fit = fit_logistic(V, d.y, separation)
    V1 = V.copy()
    V1[:, 1] = 1.0
    V0 = V.copy()
    V0[:, 1] = 0.0
    return OutcomePair(predict_probs(fit, V1), predict_probs(fit, V0), covariates, False, (fit,))


def augmented_point(d: Dataset, e_hat, scheme: WeightScheme, om: OutcomePair) -> float:
    """omega-weighted mean of (m1 - m0) plus weighted residual means in each arm."""
    e = check_propensity(e_hat)
    m1 = np.asarray(om.m1, dtype=float)
    m0 = np.asarray(om.m0, dtype=float)
    w = compute_weights(e, d.z, scheme)
    treated, s1, s0 = _arm_sums(d.z, w)
    omega = scheme.omega(e)
    first = np.dot(omega, m1 - m0) / omega.sum()
    r1 = np.dot(w[treated], d.y[treated] - m1[treated]) / s1
    r0 = np.dot(w[~treated], d.y[~treated] - m0[~treated]) / s0
    return float(first + r1 - r0)
