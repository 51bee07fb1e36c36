"""Pure-numpy implementations of the compiled kernels.

Same algorithm and status codes as ``_ckernels``; used when the extension
is not built or when ``PSWINFER_PURE_PYTHON=1``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

ST_OK = 0
ST_QUASI = 1
ST_SINGULAR = 2
ST_NOVAR = 3
ST_NONCONV = 4
ST_EMPTY_ARM = 5
ST_DEGENERATE = 6

MAX_ITER = 100
MAX_HALVING = 50
TOL_STEP = 1e-10
TOL_SCORE = 1e-8
PIVOT_RTOL = 1e-12
SEP_PROB = 1e-8
SEP_BETA = 30.0
LENIENT_RTOL = 1e-8


def _loglik(X, t, beta):
    eta = X @ beta
    return float(np.sum(t * eta - np.logaddexp(0.0, eta))), eta


def pivoted_cholesky_solve(A, b):
    """Solve ``A x = b`` for symmetric PSD ``A`` via diagonally pivoted Cholesky.

    Returns None when a pivot falls below ``PIVOT_RTOL`` times the largest pivot.
    """
    A = np.array(A, dtype=float)
    k = A.shape[0]
    perm = np.arange(k)
    L = np.zeros_like(A)
    maxpiv = 0.0
    for j in range(k):
        q = j + int(np.argmax(np.diag(A)[j:]))
        if q != j:
            perm[[j, q]] = perm[[q, j]]
            A[[j, q], :] = A[[q, j], :]
            A[:, [j, q]] = A[:, [q, j]]
            L[[j, q], :j] = L[[q, j], :j]
        if j == 0:
            maxpiv = A[0, 0]
        if not A[j, j] > PIVOT_RTOL * maxpiv or maxpiv <= 0.0:
            return None
        L[j, j] = np.sqrt(A[j, j])
        L[j + 1:, j] = A[j + 1:, j] / L[j, j]
        A[j + 1:, j + 1:] -= np.outer(L[j + 1:, j], L[j + 1:, j])
    y = np.empty(k)
    bp = np.asarray(b, dtype=float)[perm]
    for i in range(k):
        y[i] = (bp[i] - L[i, :i] @ y[:i]) / L[i, i]
    for i in range(k - 1, -1, -1):
        y[i] = (y[i] - L[i + 1:, i] @ y[i + 1:]) / L[i, i]
    x = np.empty(k)
    x[perm] = y
    return x


def newton_fit(X, t, lenient=0):
    """Returns (beta, iterations, status) for rows already selected.

    ``lenient`` also stops on a relative log-likelihood change below 1e-8,
    drops the |beta| bound and flags separation only for fitted
    probabilities that are exactly 0 or 1.
    """
    m, k = X.shape
    beta = np.zeros(k)
    tsum = t.sum()
    if tsum == 0.0 or tsum == m:
        return beta, 0, ST_NOVAR
    ll, eta = _loglik(X, t, beta)
    it = 0
    converged = False
    while True:
        p = expit(eta)
        score = X.T @ (t - p)
        if np.max(np.abs(score)) < TOL_SCORE:
            converged = True
            break
        if it >= MAX_ITER:
            break
        info = (X * (p * (1.0 - p))[:, None]).T @ X
        delta = pivoted_cholesky_solve(info, score)
        if delta is None:
            return beta, it, ST_SINGULAR
        step = 1.0
        for _ in range(MAX_HALVING):
            cand = beta + step * delta
            ll_c, eta_c = _loglik(X, t, cand)
            if ll_c >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            step *= 0.5
        maxd = np.max(np.abs(step * delta))
        dll = abs(ll_c - ll)
        beta, eta, ll = cand, eta_c, ll_c
        it += 1
        if not lenient and np.max(np.abs(beta)) > SEP_BETA:
            return beta, it, ST_QUASI
        if maxd < TOL_STEP:
            converged = True
            break
        if lenient and dll < LENIENT_RTOL * (2.0 * abs(ll) + 0.1):
            converged = True
            break
    if not converged:
        return beta, it, ST_NONCONV
    p = expit(eta)
    tol = 0.0 if lenient else SEP_PROB
    if np.any(p <= tol) or np.any(p >= 1.0 - tol):
        return beta, it, ST_QUASI
    return beta, it, ST_OK


def fit_logistic(X, t, idx=None, lenient=0):
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    if idx is not None:
        idx = np.asarray(idx, dtype=np.intp)
        X, t = X[idx], t[idx]
    return newton_fit(X, t, lenient)


def _one_replicate(ps_X, z, y, e_carried, rows, overlap, reestimate, outcome_mode, out_X, zpos,
                   lenient=0):
    zr = z[rows]
    yr = y[rows]
    if not zr.any() or zr.all():
        return np.nan, ST_EMPTY_ARM
    if reestimate:
        beta, _, st = newton_fit(ps_X[rows], zr, lenient)
        if st != ST_OK:
            return np.nan, st
        e = expit(ps_X[rows] @ beta)
    else:
        e = e_carried[rows]
    if not np.all((e > 0.0) & (e < 1.0)):
        return np.nan, ST_DEGENERATE
    V = out_X[rows]
    m1 = m0 = np.zeros_like(e)
    if outcome_mode == 1:
        alpha, _, st = newton_fit(V, yr, lenient)
        if st != ST_OK:
            return np.nan, st
        lin = V @ alpha - zr * alpha[zpos]
        m0 = expit(lin)
        m1 = expit(lin + alpha[zpos])
    elif outcome_mode == 2:
        t1 = zr == 1.0
        a1, _, st = newton_fit(V[t1], yr[t1], lenient)
        if st != ST_OK:
            return np.nan, st
        a0, _, st = newton_fit(V[~t1], yr[~t1], lenient)
        if st != ST_OK:
            return np.nan, st
        m1 = expit(V @ a1)
        m0 = expit(V @ a0)
    om = e * (1.0 - e) if overlap else np.ones_like(e)
    treated = zr == 1.0
    w = np.where(treated, om / e, om / (1.0 - e))
    est = (np.sum(w[treated] * (yr[treated] - m1[treated])) / np.sum(w[treated])
           - np.sum(w[~treated] * (yr[~treated] - m0[~treated])) / np.sum(w[~treated]))
    if outcome_mode != 0:
        est += np.sum(om * (m1 - m0)) / np.sum(om)
    return float(est), ST_OK


def replicate_estimates(ps_X, z, y, e_carried, idx, overlap, reestimate, outcome_mode,
                        out_X, zpos, lenient=0):
    idx = np.asarray(idx, dtype=np.intp)
    R = idx.shape[0]
    est = np.full(R, np.nan)
    stat = np.zeros(R, dtype=np.int32)
    for b in range(R):
        est[b], stat[b] = _one_replicate(ps_X, z, y, e_carried, idx[b], overlap, reestimate,
                                         outcome_mode, out_X, zpos, lenient)
    return est, stat
