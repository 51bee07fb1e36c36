"""Confidence intervals: Wald, percentile, basic (reflected percentile) and BCa.

Quantiles use linear interpolation between order statistics at 1-based
position 1 + (B - 1) p, the default rule of most statistical environments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .bootstrap import BootstrapDistribution
from .errors import NegativeSE, TooFewReplicates


class CIMethod(enum.Enum):
    WALD = "wald"
    PERCENTILE = "pct"
    BASIC = "basic"
    BCA = "bca"


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float = 0.95
    method: CIMethod = CIMethod.WALD
    p_value: float | None = None

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _estimates(dist) -> np.ndarray:
    est = dist.estimates if isinstance(dist, BootstrapDistribution) else dist
    return np.asarray(est, dtype=float)


def quantile(values, p):
    """Linear-interpolation quantile at 1-based position 1 + (B - 1) p."""
    return np.quantile(np.asarray(values, dtype=float), p, method="linear")


def min_replicates(level: float) -> int:
    """Smallest B for which the tail quantiles are not the sample extremes."""
    return int(np.ceil(2.0 / (1.0 - level) - 1e-9))


def _checked(dist, level) -> np.ndarray:
    est = _estimates(dist)
    need = min_replicates(level)
    if est.size < need:
        raise TooFewReplicates(f"{est.size} replicates; level {level} needs at least {need}")
    return est


def ci_wald(point: float, se: float, level: float = 0.95) -> ConfidenceInterval:
    """point +/- z se with a two-sided normal p-value against a null effect of 0."""
    if se < 0 or not np.isfinite(se):
        raise NegativeSE(f"invalid standard error {se}")
    zq = float(ndtri(0.5 + level / 2.0))
    if se == 0:
        p = 1.0 if point == 0 else 0.0
    else:
        p = float(2.0 * ndtr(-abs(point) / se))
    return ConfidenceInterval(point - zq * se, point + zq * se, level, CIMethod.WALD, p)


def ci_percentile(dist, level: float = 0.95) -> ConfidenceInterval:
    est = _checked(dist, level)
    lo, hi = quantile(est, [(1 - level) / 2, (1 + level) / 2])
    return ConfidenceInterval(float(lo), float(hi), level, CIMethod.PERCENTILE)


def ci_basic(point: float, dist, level: float = 0.95) -> ConfidenceInterval:
    est = _checked(dist, level)
    lo, hi = quantile(est, [(1 - level) / 2, (1 + level) / 2])
    return ConfidenceInterval(float(2 * point - hi), float(2 * point - lo), level, CIMethod.BASIC)


def bias_correction(point: float, est) -> float:
    """z0 from the share of replicates below the point estimate (ties count half)."""
    est = np.asarray(est, dtype=float)
    B = est.size
    share = (np.sum(est < point) + 0.5 * np.sum(est == point)) / B
    share = min(max(share, 1.0 / (B + 1)), B / (B + 1.0))
    return float(ndtri(share))


def acceleration(jackknife) -> float:
    """Skewness-based acceleration from leave-one-out estimates; 0 if they are all equal."""
    jk = np.asarray(jackknife, dtype=float)
    dev = jk.mean() - jk
    ss = np.sum(dev ** 2)
    if ss == 0.0:
        return 0.0
    return float(np.sum(dev ** 3) / (6.0 * ss ** 1.5))


def bca_levels(z0: float, a: float, level: float = 0.95) -> tuple[float, float]:
    """Adjusted quantile levels Phi(z0 + (z0 + z_q) / (1 - a (z0 + z_q)))."""
    out = []
    for q in ((1 - level) / 2, (1 + level) / 2):
        if z0 == 0.0 and a == 0.0:
            out.append(q)
            continue
        zq = z0 + ndtri(q)
        out.append(float(ndtr(z0 + zq / (1.0 - a * zq))))
    return out[0], out[1]


def ci_bca(point: float, dist, jackknife_estimates, level: float = 0.95) -> ConfidenceInterval:
    est = _checked(dist, level)
    z0 = bias_correction(point, est)
    a = acceleration(jackknife_estimates) if len(jackknife_estimates) > 1 else 0.0
    a1, a2 = bca_levels(z0, a, level)
    lo, hi = quantile(est, [a1, a2])
    return ConfidenceInterval(float(lo), float(hi), level, CIMethod.BCA)
