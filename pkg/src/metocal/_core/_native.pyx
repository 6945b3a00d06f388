# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernels for the Gaussian likelihood core.

Hot path: the negative log-likelihood of a Gaussian regression whose
standard deviation is affine in a per-row scale column, and a Nelder-Mead
simplex loop that minimizes it without crossing back into Python per
evaluation. `_pyfallback` implements the same contract in numpy.
"""

from libc.math cimport log, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np

BACKEND = "native"

cdef double LOG_2PI = 1.8378770664093453


cdef double _nll(const double* th, const double* y, const double* G,
                 const double* s_e, Py_ssize_t n, Py_ssize_t pm) noexcept nogil:
    """NLL at full parameter vector th = (beta[0..pm-1], d, e)."""
    cdef double d = th[pm]
    cdef double e = th[pm + 1]
    cdef double acc = 0.0
    cdef double mu, sig, r
    cdef Py_ssize_t i, j
    for i in range(n):
        sig = d + e * s_e[i]
        if sig <= 0.0:
            return INFINITY
        mu = 0.0
        for j in range(pm):
            mu += th[j] * G[i * pm + j]
        r = y[i] - mu
        acc += log(sig) + r * r / (2.0 * sig * sig)
    return acc + 0.5 * n * LOG_2PI


def gaussian_nll(const double[::1] theta, const double[::1] y, const double[:, ::1] G, const double[::1] s_e):
    """Sum of negative log Gaussian densities with sd = theta[-2] + theta[-1]*s_e.

    theta holds the mean coefficients (one per design column) followed by
    the spread intercept and spread slope. Returns +inf when any row's sd
    is non-positive.
    """
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t pm = G.shape[1]
    if theta.shape[0] != pm + 2:
        raise ValueError("theta must have G.shape[1] + 2 entries")
    if G.shape[0] != n or s_e.shape[0] != n:
        raise ValueError("y, G and s_e must share the same row count")
    cdef double out
    with nogil:
        out = _nll(&theta[0], &y[0], &G[0, 0], &s_e[0], n, pm)
    return out


cdef void _insertion_sort(double* f, double* sim, double* row, Py_ssize_t nv, Py_ssize_t k) noexcept nogil:
    """Sort simplex vertices (rows of sim) by f, ascending. row is scratch of size k."""
    cdef Py_ssize_t i, j, m, s
    cdef double fk
    for i in range(1, nv):
        fk = f[i]
        j = i
        while j > 0 and f[j - 1] > fk:
            j -= 1
        if j != i:
            for m in range(k):
                row[m] = sim[i * k + m]
            for s in range(i, j, -1):
                f[s] = f[s - 1]
                for m in range(k):
                    sim[s * k + m] = sim[(s - 1) * k + m]
            f[j] = fk
            for m in range(k):
                sim[j * k + m] = row[m]


def fit_gaussian_nm(const double[::1] x0, const double[::1] y, const double[:, ::1] G, const double[::1] s_e,
                    bint opt_e, double init_step, double ftol, int max_iter):
    """Nelder-Mead minimization of the Gaussian NLL from start point x0.

    x0 is the full parameter vector (beta..., d, e). When opt_e is false the
    spread slope e is pinned at x0's value and excluded from the simplex.
    Convergence: spread of simplex NLL values below ftol. Returns
    (theta, nll, iterations, converged).
    """
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t pm = G.shape[1]
    cdef Py_ssize_t k = pm + 2 if opt_e else pm + 1  # free dimensions
    cdef Py_ssize_t nfull = pm + 2
    cdef Py_ssize_t nv = k + 1
    if x0.shape[0] != nfull:
        raise ValueError("x0 must have G.shape[1] + 2 entries")

    cdef double* sim = <double*> malloc(nv * k * sizeof(double))
    cdef double* f = <double*> malloc(nv * sizeof(double))
    cdef double* cen = <double*> malloc(k * sizeof(double))
    cdef double* xr = <double*> malloc(k * sizeof(double))
    cdef double* xe = <double*> malloc(k * sizeof(double))
    cdef double* th = <double*> malloc(nfull * sizeof(double))
    cdef double* row = <double*> malloc(k * sizeof(double))
    if sim == NULL or f == NULL or cen == NULL or xr == NULL or xe == NULL or th == NULL or row == NULL:
        free(sim); free(f); free(cen); free(xr); free(xe); free(th); free(row)
        raise MemoryError()

    cdef double e_fixed = x0[pm + 1]
    cdef const double* yp = &y[0]
    cdef const double* Gp = &G[0, 0]
    cdef const double* sp = &s_e[0]

    cdef Py_ssize_t i, j
    cdef int it = 0
    cdef bint converged = 0
    cdef double step, fr, fe, fc
    cdef double rho = 1.0, chi = 2.0, psi = 0.5, shr = 0.5

    with nogil:
        # initial simplex: x0 plus a perturbation of each free coordinate
        for j in range(k):
            sim[j] = x0[j]
        th[pm + 1] = e_fixed
        for i in range(1, nv):
            for j in range(k):
                sim[i * k + j] = sim[j]
            step = init_step * sim[i - 1] if sim[i - 1] != 0.0 else 0.00025
            sim[i * k + (i - 1)] += step
        for i in range(nv):
            for j in range(k):
                th[j] = sim[i * k + j]
            f[i] = _nll(th, yp, Gp, sp, n, pm)
        _insertion_sort(f, sim, row, nv, k)

        while it < max_iter:
            if f[nv - 1] - f[0] < ftol:
                converged = 1
                break
            it += 1
            # centroid of all vertices but the worst
            for j in range(k):
                cen[j] = 0.0
            for i in range(nv - 1):
                for j in range(k):
                    cen[j] += sim[i * k + j]
            for j in range(k):
                cen[j] /= (nv - 1)
            # reflection
            for j in range(k):
                xr[j] = cen[j] + rho * (cen[j] - sim[(nv - 1) * k + j])
                th[j] = xr[j]
            fr = _nll(th, yp, Gp, sp, n, pm)
            if fr < f[0]:
                # expansion
                for j in range(k):
                    xe[j] = cen[j] + rho * chi * (cen[j] - sim[(nv - 1) * k + j])
                    th[j] = xe[j]
                fe = _nll(th, yp, Gp, sp, n, pm)
                if fe < fr:
                    for j in range(k):
                        sim[(nv - 1) * k + j] = xe[j]
                    f[nv - 1] = fe
                else:
                    for j in range(k):
                        sim[(nv - 1) * k + j] = xr[j]
                    f[nv - 1] = fr
            elif fr < f[nv - 2]:
                for j in range(k):
                    sim[(nv - 1) * k + j] = xr[j]
                f[nv - 1] = fr
            else:
                if fr < f[nv - 1]:
                    # outside contraction
                    for j in range(k):
                        xe[j] = cen[j] + psi * rho * (cen[j] - sim[(nv - 1) * k + j])
                        th[j] = xe[j]
                    fc = _nll(th, yp, Gp, sp, n, pm)
                    if fc <= fr:
                        for j in range(k):
                            sim[(nv - 1) * k + j] = xe[j]
                        f[nv - 1] = fc
                    else:
                        fc = INFINITY  # force shrink
                else:
                    # inside contraction
                    for j in range(k):
                        xe[j] = cen[j] - psi * (cen[j] - sim[(nv - 1) * k + j])
                        th[j] = xe[j]
                    fc = _nll(th, yp, Gp, sp, n, pm)
                    if fc < f[nv - 1]:
                        for j in range(k):
                            sim[(nv - 1) * k + j] = xe[j]
                        f[nv - 1] = fc
                    else:
                        fc = INFINITY
                if fc == INFINITY:
                    # shrink toward the best vertex
                    for i in range(1, nv):
                        for j in range(k):
                            sim[i * k + j] = sim[j] + shr * (sim[i * k + j] - sim[j])
                            th[j] = sim[i * k + j]
                        f[i] = _nll(th, yp, Gp, sp, n, pm)
            _insertion_sort(f, sim, row, nv, k)

    theta = np.empty(nfull, dtype=np.float64)
    for j in range(k):
        theta[j] = sim[j]
    if not opt_e:
        theta[pm + 1] = e_fixed
    fbest = f[0]
    free(sim); free(f); free(cen); free(xr); free(xe); free(th); free(row)
    return theta, fbest, it, bool(converged)
