"""Sandwich (M-estimation) variance estimators.

All estimators return the per-observation asymptotic variance ``sigma``;
the variance of the point estimate is ``sigma / n``.

* :func:`variance_ms_ate`: model-based sandwich, bread block for the outcome
  means replaced by its expectation (the identity).
* :func:`variance_pes_ate`: fully empirical sandwich with inverse-sum-of-weights
  normalization everywhere, including the PS correction term.
* :func:`variance_fixed`: propensity scores treated as known constants.
* :func:`variance_numeric`: generic stacked estimating equations with a
  central-difference bread; covers ATE, ATO and augmented estimators.
* :func:`appendix_oracle_pes`: explicit block bread/meat matrices, used as an
  independent check on the closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import Dataset, DesignMatrix
from .errors import EmptyArm, JacobianNonFinite, SingularBread, SingularInformation
from .estimators import OutcomePair, WeightScheme, check_propensity, compute_weights

FD_REL_STEP = 1e-5
STACK_RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class VarianceResult:
    sigma: float
    n: int

    def __post_init__(self):
        if not (self.sigma >= -1e-14 * max(1.0, abs(self.sigma))):
            raise ValueError(f"negative variance {self.sigma}")
        object.__setattr__(self, "sigma", max(float(self.sigma), 0.0))

    @property
    def variance(self) -> float:
        return self.sigma / self.n

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance))


def _X(dm) -> np.ndarray:
    return np.asarray(dm.values if isinstance(dm, DesignMatrix) else dm, dtype=float)


def iptw_means(y, z, e) -> tuple[float, float]:
    """Hajek IPTW means in each arm."""
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    s1 = np.sum(z / e)
    s0 = np.sum((1 - z) / (1 - e))
    if s1 <= 0 or s0 <= 0:
        raise EmptyArm("both arms must be present")
    return float(np.sum(z * y / e) / s1), float(np.sum((1 - z) * y / (1 - e)) / s0)


def _ate_terms(d: Dataset, e_hat, mu1, mu0):
    e = check_propensity(e_hat)
    d.require_both_arms()
    if mu1 is None or mu0 is None:
        mu1, mu0 = iptw_means(d.y, d.z, e)
    z, y = d.z, d.y
    t1 = z * (y - mu1) / e
    t0 = (1 - z) * (y - mu0) / (1 - e)
    return e, t1, t0


def _info_inverse(e, X):
    """Inverse of E_bb = n^-1 sum e(1-e) X X'."""
    E = (X * (e * (1 - e))[:, None]).T @ X / X.shape[0]
    if not np.linalg.cond(E) < 1e14:
        raise SingularInformation("propensity information matrix is singular")
    return np.linalg.inv(E)


def variance_ms_ate(d: Dataset, e_hat, dm, mu1=None, mu0=None) -> VarianceResult:
    e, t1, t0 = _ate_terms(d, e_hat, mu1, mu0)
    X = _X(dm)
    n = d.n
    H1 = (t1 * (1 - e) + t0 * e) @ X / n
    Einv = _info_inverse(e, X)
    phi = t1 - t0 - (d.z - e) * (X @ (Einv @ H1))
    return VarianceResult(float(np.mean(phi ** 2)), n)


def variance_pes_ate(d: Dataset, e_hat, dm, mu1=None, mu0=None) -> VarianceResult:
    e, t1, t0 = _ate_terms(d, e_hat, mu1, mu0)
    X = _X(dm)
    n = d.n
    a1 = np.mean(d.z / e)
    a0 = np.mean((1 - d.z) / (1 - e))
    H2 = (t1 * (1 - e) / a1 + t0 * e / a0) @ X / n
    Einv = _info_inverse(e, X)
    phi = t1 / a1 - t0 / a0 - (d.z - e) * (X @ (Einv @ H2))
    return VarianceResult(float(np.mean(phi ** 2)), n)


def variance_fixed(d: Dataset, e_hat, w=None,
                   scheme: WeightScheme = WeightScheme.IPTW) -> VarianceResult:
    """Hajek influence variance ignoring estimation of the propensity scores."""
    e = check_propensity(e_hat)
    d.require_both_arms()
    if w is None:
        w = compute_weights(e, d.z, scheme)
    w = np.asarray(w, float)
    z, y = d.z, d.y
    n = d.n
    a1 = np.mean(z * w)
    a0 = np.mean((1 - z) * w)
    mu1 = np.sum(z * w * y) / np.sum(z * w)
    mu0 = np.sum((1 - z) * w * y) / np.sum((1 - z) * w)
    phi = z * w * (y - mu1) / a1 - (1 - z) * w * (y - mu0) / a0
    return VarianceResult(float(np.mean(phi ** 2)), n)


def appendix_oracle_pes(d: Dataset, e_hat, dm, mu1=None, mu0=None,
                        a22_identity: bool = False) -> VarianceResult:
    """Delta-Delta element of A^-1 B A^-T built from explicit per-block averages.

    With ``a22_identity=True`` the outcome-mean bread block is replaced by
    the 2x2 identity, which gives the model-based sandwich.
    """
    e, t1, t0 = _ate_terms(d, e_hat, mu1, mu0)
    X = _X(dm)
    n, k = X.shape
    z = d.z

    A11 = sum(e[i] * (1 - e[i]) * np.outer(X[i], X[i]) for i in range(n)) / n
    H = np.zeros((2, k))
    for i in range(n):
        H[0] += t1[i] * (1 - e[i]) * X[i]
        H[1] -= t0[i] * e[i] * X[i]
    H /= n
    A22 = np.eye(2) if a22_identity else np.diag([np.mean(z / e), np.mean((1 - z) / (1 - e))])
    C = np.array([1.0, -1.0])

    dim = k + 3
    A = np.zeros((dim, dim))
    A[:k, :k] = A11
    A[k:k + 2, :k] = H
    A[k:k + 2, k:k + 2] = A22
    A[k + 2, k:k + 2] = -C
    A[k + 2, k + 2] = 1.0

    B = np.zeros((dim, dim))
    for i in range(n):
        psi = np.concatenate([(z[i] - e[i]) * X[i], [t1[i], t0[i], 0.0]])
        B += np.outer(psi, psi)
    B /= n

    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise SingularBread("bread matrix is singular") from None
    V = Ainv @ B @ Ainv.T
    return VarianceResult(float(V[-1, -1]), n)


@dataclass
class StackSpec:
    """Stacked estimating equations.

    ``psi(theta)`` returns an (n, len(theta)) array of per-subject estimating
    functions; parameters with ``fixed_mask`` set are treated as known.
    Delta is always the last parameter.
    """

    psi: Callable[[np.ndarray], np.ndarray]
    theta_hat: np.ndarray
    names: tuple[str, ...]
    fixed_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        if self.fixed_mask is None:
            self.fixed_mask = np.zeros(self.theta_hat.size, dtype=bool)
        self.fixed_mask = np.asarray(self.fixed_mask, dtype=bool)

    def residual(self, theta=None) -> np.ndarray:
        theta = self.theta_hat if theta is None else theta
        return self.psi(theta).sum(axis=0)

    def check(self, tol: float = STACK_RESIDUAL_TOL) -> None:
        r = self.residual()[~self.fixed_mask]
        if np.max(np.abs(r)) > tol:
            raise ValueError(f"stack not solved at theta_hat: max |sum psi| = {np.max(np.abs(r)):.3g}")


def numeric_jacobian(f, theta, rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central differences with h_j = rel_step * max(1, |theta_j|)."""
    theta = np.asarray(theta, dtype=float)
    f0 = np.asarray(f(theta))
    J = np.empty((f0.size, theta.size))
    for j in range(theta.size):
        h = rel_step * max(1.0, abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h
        tm[j] -= h
        J[:, j] = (np.asarray(f(tp)) - np.asarray(f(tm))) / (tp[j] - tm[j])
    return J


def variance_numeric(spec: StackSpec, theta_hat=None) -> VarianceResult:
    theta = spec.theta_hat if theta_hat is None else np.asarray(theta_hat, dtype=float)
    free = ~spec.fixed_mask
    if not free[-1]:
        raise ValueError("Delta (last parameter) cannot be fixed")
    psi0 = spec.psi(theta)
    n = psi0.shape[0]

    def mean_psi_free(th_free):
        th = theta.copy()
        th[free] = th_free
        return spec.psi(th)[:, free].mean(axis=0)

    A = -numeric_jacobian(mean_psi_free, theta[free])
    if not np.all(np.isfinite(A)):
        raise JacobianNonFinite("non-finite entries in the numeric bread")
    P = psi0[:, free]
    B = P.T @ P / n
    try:
        if np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise SingularBread("numeric bread matrix is singular") from None
    V = Ainv @ B @ Ainv.T
    return VarianceResult(float(V[-1, -1]), n)


def build_stack(d: Dataset, dm, scheme: WeightScheme, ps_beta,
                outcome: OutcomePair | None = None, outcome_design=None,
                ps_fixed: bool = False) -> StackSpec:
    """Stack for the weighted (or augmented) estimator with a logistic PS model.

    Parameter order: beta, [alpha], outcome means / residual means, Delta.
    ``theta_hat`` solves the stack, so its Delta equals the point estimate.
    For the augmented stack pass the fitted ``outcome`` and its design matrix
    (``[1, Z, X]`` for the single model, ``[1, X]`` for per-arm models).
    """
    X = _X(dm)
    y, z = d.y, d.z
    k = X.shape[1]
    beta = np.asarray(ps_beta, dtype=float)
    e = check_propensity(expit(X @ beta))
    d.require_both_arms()

    def weights(b):
        e = expit(X @ b)
        om = scheme.omega(e)
        return e, om, z * om / e, (1 - z) * om / (1 - e)

    if outcome is None:
        _, _, w1, w0 = weights(beta)
        mu1 = np.sum(w1 * y) / np.sum(w1)
        mu0 = np.sum(w0 * y) / np.sum(w0)
        theta = np.concatenate([beta, [mu1, mu0, mu1 - mu0]])

        def psi(th):
            b = th[:k]
            m1, m0, delta = th[k:]
            e, _, w1, w0 = weights(b)
            out = np.empty((y.size, k + 3))
            out[:, :k] = (z - e)[:, None] * X
            out[:, k] = w1 * (y - m1)
            out[:, k + 1] = w0 * (y - m0)
            out[:, k + 2] = m1 - m0 - delta
            return out

        names = tuple(f"beta{j}" for j in range(k)) + ("mu1", "mu0", "delta")
    else:
        V = np.asarray(outcome_design, dtype=float)
        q = V.shape[1]
        if outcome.per_arm:
            alpha = np.concatenate([f.beta for f in outcome.fits])
            na = 2 * q
            arm1 = z == 1

            def predict(a):
                return expit(V @ a[:q]), expit(V @ a[q:])

            def alpha_scores(a):
                s = np.zeros((y.size, na))
                s[:, :q] = (arm1 * (y - expit(V @ a[:q])))[:, None] * V
                s[:, q:] = ((~arm1) * (y - expit(V @ a[q:])))[:, None] * V
                return s
        else:
            alpha = outcome.fits[0].beta.copy()
            na = q
            V1 = V.copy()
            V1[:, 1] = 1.0
            V0 = V.copy()
            V0[:, 1] = 0.0

            def predict(a):
                return expit(V1 @ a), expit(V0 @ a)

            def alpha_scores(a):
                return (y - expit(V @ a))[:, None] * V

        m1, m0 = predict(alpha)
        _, om, w1, w0 = weights(beta)
        nu = np.sum(om * (m1 - m0)) / np.sum(om)
        r1 = np.sum(w1 * (y - m1)) / np.sum(w1)
        r0 = np.sum(w0 * (y - m0)) / np.sum(w0)
        theta = np.concatenate([beta, alpha, [nu, r1, r0, nu + r1 - r0]])
        j0 = k + na

        def psi(th):
            b = th[:k]
            a = th[k:j0]
            nu, r1, r0, delta = th[j0:]
            e, om, w1, w0 = weights(b)
            p1, p0 = predict(a)
            out = np.empty((y.size, j0 + 4))
            out[:, :k] = (z - e)[:, None] * X
            out[:, k:j0] = alpha_scores(a)
            out[:, j0] = om * (p1 - p0 - nu)
            out[:, j0 + 1] = w1 * (y - p1 - r1)
            out[:, j0 + 2] = w0 * (y - p0 - r0)
            out[:, j0 + 3] = nu + r1 - r0 - delta
            return out

        names = (tuple(f"beta{j}" for j in range(k)) + tuple(f"alpha{j}" for j in range(na))
                 + ("nu", "resid1", "resid0", "delta"))

    mask = np.zeros(theta.size, dtype=bool)
    if ps_fixed:
        mask[:k] = True
    return StackSpec(psi, theta, names, mask)


def variance_numeric_for(d: Dataset, dm, scheme: WeightScheme, ps_beta,
                         outcome: OutcomePair | None = None, outcome_design=None,
                         ps_fixed: bool = False) -> VarianceResult:
    """Build the stack and return its numeric sandwich variance."""
    return variance_numeric(build_stack(d, dm, scheme, ps_beta, outcome, outcome_design, ps_fixed))


__all__ = (
    "VarianceResult", "StackSpec", "variance_ms_ate", "variance_pes_ate", "variance_fixed",
    "variance_numeric", "build_stack", "appendix_oracle_pes", "numeric_jacobian",
    "variance_numeric_for", "iptw_means",
)
