# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: logistic Newton fits over row subsets and replicate
point estimates. Must stay step-for-step identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, sqrt, INFINITY
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dsyrk

cnp.import_array()

cdef enum:
    ST_OK = 0
    ST_QUASI = 1
    ST_SINGULAR = 2
    ST_NOVAR = 3
    ST_NONCONV = 4
    ST_EMPTY_ARM = 5
    ST_DEGENERATE = 6

cdef int MAX_ITER = 100
cdef int MAX_HALVING = 50
cdef double TOL_STEP = 1e-10
cdef double TOL_SCORE = 1e-8
cdef double PIVOT_RTOL = 1e-12
cdef double SEP_PROB = 1e-8
cdef double SEP_BETA = 30.0
cdef double LENIENT_RTOL = 1e-8


cdef inline double expit(double x) nogil:
    cdef double ex
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    ex = exp(x)
    return ex / (1.0 + ex)


cdef inline double log1pexp(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef double loglik(const double* X, const double* t, int m, int k,
                   const double* beta, double* eta, double* pr) nogil:
    """Bernoulli log-likelihood; also fills the linear predictor and probabilities."""
    cdef int i, j
    cdef double s = 0.0, v, ex
    cdef const double* xr
    for i in range(m):
        xr = X + i * k
        v = 0.0
        for j in range(k):
            v += xr[j] * beta[j]
        eta[i] = v
        if v >= 0:
            ex = exp(-v)
            pr[i] = 1.0 / (1.0 + ex)
            s += t[i] * v - (v + log1p(ex))
        else:
            ex = exp(v)
            pr[i] = ex / (1.0 + ex)
            s += t[i] * v - log1p(ex)
    return s


cdef int pivoted_cholesky_solve(double* A, int k, const double* b, double* x,
                                int* perm, double* y) nogil:
    """Solve A x = b in place with a diagonally pivoted Cholesky factorization.
    A (k x k, row-major) is overwritten with L in its lower triangle."""
    cdef int i, j, l, q, tmp
    cdef double maxpiv = 0.0, best, s, dtmp
    for i in range(k):
        perm[i] = i
    for j in range(k):
        q = j
        best = A[j * k + j]
        for i in range(j + 1, k):
            if A[i * k + i] > best:
                best = A[i * k + i]
                q = i
        if q != j:
            tmp = perm[j]; perm[j] = perm[q]; perm[q] = tmp
            # symmetric swap of rows and columns j, q
            for i in range(k):
                dtmp = A[j * k + i]; A[j * k + i] = A[q * k + i]; A[q * k + i] = dtmp
            for i in range(k):
                dtmp = A[i * k + j]; A[i * k + j] = A[i * k + q]; A[i * k + q] = dtmp
        if j == 0:
            maxpiv = A[0]
        if not (A[j * k + j] > PIVOT_RTOL * maxpiv) or maxpiv <= 0.0:
            return ST_SINGULAR
        A[j * k + j] = sqrt(A[j * k + j])
        for i in range(j + 1, k):
            A[i * k + j] = A[i * k + j] / A[j * k + j]
        for i in range(j + 1, k):
            for l in range(j + 1, i + 1):
                A[i * k + l] -= A[i * k + j] * A[l * k + j]
            # keep the upper triangle symmetric for later swaps
            for l in range(j + 1, i + 1):
                A[l * k + i] = A[i * k + l]
    # forward: L w = P' b
    for i in range(k):
        s = b[perm[i]]
        for j in range(i):
            s -= A[i * k + j] * y[j]
        y[i] = s / A[i * k + i]
    # backward: L' v = w
    for i in range(k - 1, -1, -1):
        s = y[i]
        for j in range(i + 1, k):
            s -= A[j * k + i] * y[j]
        y[i] = s / A[i * k + i]
    for i in range(k):
        x[perm[i]] = y[i]
    return ST_OK


cdef int newton_fit(const double* Xall, const double* tall, const long* idx, int m, int k,
                    double* beta, int* iters, double* work, int lenient) nogil:
    """Newton-Raphson with step halving from beta = 0 on rows ``idx``.

    ``lenient`` also stops on a relative log-likelihood change below 1e-8,
    drops the |beta| bound and flags separation only for fitted
    probabilities that are exactly 0 or 1.

    work needs work_size(m, k) doubles; the int pivot buffer is carved from the tail."""
    cdef double* X = work
    cdef double* Xs = X + m * k
    cdef double* t = Xs + m * k
    cdef double* eta = t + m
    cdef double* eta_c = eta + m
    cdef double* pr = eta_c + m
    cdef double* pr_c = pr + m
    cdef double* A = pr_c + m
    cdef double* score = A + k * k
    cdef double* delta = score + k
    cdef double* cand = delta + k
    cdef double* ybuf = cand + k
    cdef int* perm = <int*> (ybuf + k)
    cdef int i, j, l, h, status, it = 0
    cdef double ll, ll_c, dll, p, wgt, xj, step, maxs, maxd, tsum = 0.0
    cdef const double* xr
    cdef bint converged = False
    cdef char uplo = b'L', trans = b'N'
    cdef double one = 1.0, zero = 0.0

    for i in range(m):
        xr = Xall + idx[i] * k
        for j in range(k):
            X[i * k + j] = xr[j]
        t[i] = tall[idx[i]]
        tsum += t[i]
    if tsum == 0.0 or tsum == m:
        iters[0] = 0
        return ST_NOVAR

    for j in range(k):
        beta[j] = 0.0
    ll = loglik(X, t, m, k, beta, eta, pr)

    while True:
        for j in range(k):
            score[j] = 0.0
        for i in range(m):
            p = pr[i]
            xr = X + i * k
            for j in range(k):
                score[j] += (t[i] - p) * xr[j]
        maxs = 0.0
        for j in range(k):
            if fabs(score[j]) > maxs:
                maxs = fabs(score[j])
        if maxs < TOL_SCORE:
            converged = True
            break
        if it >= MAX_ITER:
            break
        for i in range(m):
            wgt = sqrt(pr[i] * (1.0 - pr[i]))
            xr = X + i * k
            for j in range(k):
                Xs[i * k + j] = wgt * xr[j]
        # row-major Xs (m x k) is column-major (k x m); A = Xs' Xs lands in the
        # column-major lower triangle, i.e. the row-major upper triangle
        dsyrk(&uplo, &trans, &k, &m, &one, Xs, &k, &zero, A, &k)
        for j in range(k):
            for l in range(j + 1, k):
                A[l * k + j] = A[j * k + l]
        status = pivoted_cholesky_solve(A, k, score, delta, perm, ybuf)
        if status != ST_OK:
            iters[0] = it
            return status
        step = 1.0
        for h in range(MAX_HALVING):
            for j in range(k):
                cand[j] = beta[j] + step * delta[j]
            ll_c = loglik(X, t, m, k, cand, eta_c, pr_c)
            if ll_c >= ll - 1e-12 * (1.0 + fabs(ll)):
                break
            step *= 0.5
        maxd = 0.0
        for j in range(k):
            if fabs(step * delta[j]) > maxd:
                maxd = fabs(step * delta[j])
            beta[j] = cand[j]
        for i in range(m):
            eta[i] = eta_c[i]
            pr[i] = pr_c[i]
        dll = fabs(ll_c - ll)
        ll = ll_c
        it += 1
        if not lenient:
            for j in range(k):
                if fabs(beta[j]) > SEP_BETA:
                    iters[0] = it
                    return ST_QUASI
        if maxd < TOL_STEP:
            converged = True
            break
        if lenient and dll < LENIENT_RTOL * (2.0 * fabs(ll) + 0.1):
            converged = True
            break

    iters[0] = it
    if not converged:
        return ST_NONCONV
    for i in range(m):
        p = pr[i]
        if lenient:
            if p <= 0.0 or p >= 1.0:
                return ST_QUASI
        elif p <= SEP_PROB or p >= 1.0 - SEP_PROB:
            return ST_QUASI
    return ST_OK


cdef inline int work_size(int m, int k):
    return 2 * m * k + 5 * m + k * k + 5 * k + k + 1


def fit_logistic(const double[:, ::1] X, const double[::1] t, idx=None, int lenient=0):
    """Fit on rows ``idx`` (all rows when None). Returns (beta, iterations, status)."""
    cdef int n = X.shape[0], k = X.shape[1], m, it = 0, status
    cdef cnp.ndarray[long, ndim=1] ridx
    if idx is None:
        ridx = np.arange(n, dtype=np.int64)
    else:
        ridx = np.ascontiguousarray(idx, dtype=np.int64)
    m = ridx.shape[0]
    beta = np.zeros(k)
    cdef double[::1] bv = beta
    cdef double* work = <double*> malloc(work_size(m, k) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        with nogil:
            status = newton_fit(&X[0, 0], &t[0], <long*> ridx.data, m, k, &bv[0], &it, work, lenient)
    finally:
        free(work)
    return beta, it, status


cdef int outcome_predict(const double* V, const double* zcol, int zpos, int k, int r,
                         const double* alpha, double* m1, double* m0) nogil:
    cdef int j
    cdef double lin = 0.0
    for j in range(k):
        lin += V[r * k + j] * alpha[j]
    if zpos >= 0:
        lin -= zcol[r] * alpha[zpos]
        m0[0] = expit(lin)
        m1[0] = expit(lin + alpha[zpos])
    return 0


def replicate_estimates(const double[:, ::1] ps_X, const double[::1] z, const double[::1] y,
                        const double[::1] e_carried, const long[:, ::1] idx,
                        int overlap, int reestimate, int outcome_mode,
                        const double[:, ::1] out_X, int zpos, int lenient=0):
    """Point estimate for every row of ``idx`` (each row is one replicate sample).

    outcome_mode: 0 none, 1 single model on out_X (Z column at zpos),
    2 separate per-arm models on out_X (no Z column).
    Returns (estimates, status) arrays; failed replicates hold NaN.
    """
    cdef int R = idx.shape[0], m = idx.shape[1], n = ps_X.shape[0]
    cdef int k = ps_X.shape[1], q = out_X.shape[1]
    cdef int kk = k if k > q else q
    est = np.full(R, np.nan)
    stat = np.zeros(R, dtype=np.int32)
    cdef double[::1] ev = est
    cdef int[::1] sv = stat
    cdef double* work = <double*> malloc(work_size(m, kk) * sizeof(double))
    cdef double* beta = <double*> malloc(kk * sizeof(double))
    cdef double* alpha1 = <double*> malloc(kk * sizeof(double))
    cdef double* alpha0 = <double*> malloc(kk * sizeof(double))
    cdef double* e = <double*> malloc(m * sizeof(double))
    cdef long* sub1 = <long*> malloc(m * sizeof(long))
    cdef long* sub0 = <long*> malloc(m * sizeof(long))
    cdef int b, i, j, r, it, status, n1, n0
    cdef double lin, ei, om, w, m1, m0, s1, s0, a1, a0, so, sa
    if (work == NULL or beta == NULL or alpha1 == NULL or alpha0 == NULL or e == NULL
            or sub1 == NULL or sub0 == NULL):
        free(work); free(beta); free(alpha1); free(alpha0); free(e); free(sub1); free(sub0)
        raise MemoryError()
    with nogil:
        for b in range(R):
            n1 = 0
            n0 = 0
            for i in range(m):
                r = idx[b, i]
                if z[r] == 1.0:
                    sub1[n1] = r
                    n1 += 1
                else:
                    sub0[n0] = r
                    n0 += 1
            if n1 == 0 or n0 == 0:
                sv[b] = ST_EMPTY_ARM
                continue
            status = ST_OK
            if reestimate:
                status = newton_fit(&ps_X[0, 0], &z[0], &idx[b, 0], m, k, beta, &it, work, lenient)
                if status != ST_OK:
                    sv[b] = status
                    continue
                for i in range(m):
                    r = idx[b, i]
                    lin = 0.0
                    for j in range(k):
                        lin += ps_X[r, j] * beta[j]
                    e[i] = expit(lin)
            else:
                for i in range(m):
                    e[i] = e_carried[idx[b, i]]
            for i in range(m):
                if not (e[i] > 0.0 and e[i] < 1.0):
                    status = ST_DEGENERATE
                    break
            if status != ST_OK:
                sv[b] = status
                continue
            if outcome_mode == 1:
                status = newton_fit(&out_X[0, 0], &y[0], &idx[b, 0], m, q, alpha1, &it, work, lenient)
            elif outcome_mode == 2:
                status = newton_fit(&out_X[0, 0], &y[0], sub1, n1, q, alpha1, &it, work, lenient)
                if status == ST_OK:
                    status = newton_fit(&out_X[0, 0], &y[0], sub0, n0, q, alpha0, &it, work, lenient)
            if status != ST_OK:
                sv[b] = status
                continue
            s1 = 0.0; s0 = 0.0; a1 = 0.0; a0 = 0.0; so = 0.0; sa = 0.0
            for i in range(m):
                r = idx[b, i]
                ei = e[i]
                om = ei * (1.0 - ei) if overlap else 1.0
                m1 = 0.0
                m0 = 0.0
                if outcome_mode == 1:
                    outcome_predict(&out_X[0, 0], &z[0], zpos, q, r, alpha1, &m1, &m0)
                elif outcome_mode == 2:
                    lin = 0.0
                    for j in range(q):
                        lin += out_X[r, j] * alpha1[j]
                    m1 = expit(lin)
                    lin = 0.0
                    for j in range(q):
                        lin += out_X[r, j] * alpha0[j]
                    m0 = expit(lin)
                if z[r] == 1.0:
                    w = om / ei
                    s1 += w
                    a1 += w * (y[r] - m1)
                else:
                    w = om / (1.0 - ei)
                    s0 += w
                    a0 += w * (y[r] - m0)
                if outcome_mode != 0:
                    so += om
                    sa += om * (m1 - m0)
            if outcome_mode != 0:
                ev[b] = sa / so + a1 / s1 - a0 / s0
            else:
                ev[b] = a1 / s1 - a0 / s0
            sv[b] = ST_OK
    free(work); free(beta); free(alpha1); free(alpha0); free(e); free(sub1); free(sub0)
    return est, stat
