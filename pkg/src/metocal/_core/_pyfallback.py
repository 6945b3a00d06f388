"""Pure-Python (numpy) implementation of the likelihood core.

Mirrors the contract of the compiled `_native` module so either backend can
be selected at import time. Kept dependency-light and algorithmically
identical: same simplex rules, same convergence test, same +inf handling of
the sd-positivity constraint.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

LOG_2PI = 1.8378770664093453


def gaussian_nll(theta, y, G, s_e):
    """Sum of negative log Gaussian densities with sd = theta[-2] + theta[-1]*s_e.

    theta holds the mean coefficients (one per design column) followed by
    the spread intercept and spread slope. Returns +inf when any row's sd
    is non-positive.
    """
    theta = np.asarray(theta, dtype=np.float64)
    pm = G.shape[1]
    if theta.shape[0] != pm + 2:
        raise ValueError("theta must have G.shape[1] + 2 entries")
    if G.shape[0] != y.shape[0] or s_e.shape[0] != y.shape[0]:
        raise ValueError("y, G and s_e must share the same row count")
    sig = theta[pm] + theta[pm + 1] * s_e
    if np.any(sig <= 0.0):
        return float("inf")
    r = y - G @ theta[:pm]
    return float(np.sum(np.log(sig) + r * r / (2.0 * sig * sig)) + 0.5 * y.shape[0] * LOG_2PI)


def fit_gaussian_nm(x0, y, G, s_e, opt_e, init_step, ftol, max_iter):
    """Nelder-Mead minimization of the Gaussian NLL from start point x0.

    x0 is the full parameter vector (beta..., d, e). When opt_e is false the
    spread slope e is pinned at x0's value and excluded from the simplex.
    Convergence: spread of simplex NLL values below ftol. Returns
    (theta, nll, iterations, converged).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    pm = G.shape[1]
    if x0.shape[0] != pm + 2:
        raise ValueError("x0 must have G.shape[1] + 2 entries")
    k = pm + 2 if opt_e else pm + 1
    e_fixed = x0[pm + 1]

    def objective(x):
        full = np.empty(pm + 2)
        full[:k] = x
        if not opt_e:
            full[pm + 1] = e_fixed
        return gaussian_nll(full, y, G, s_e)

    sim = np.tile(x0[:k], (k + 1, 1))
    for i in range(k):
        step = init_step * sim[0, i] if sim[0, i] != 0.0 else 0.00025
        sim[i + 1, i] += step
    f = np.array([objective(v) for v in sim])
    order = np.argsort(f, kind="stable")
    sim, f = sim[order], f[order]

    rho, chi, psi, shr = 1.0, 2.0, 0.5, 0.5
    it = 0
    converged = False
    while it < max_iter:
        if f[-1] - f[0] < ftol:
            converged = True
            break
        it += 1
        cen = sim[:-1].mean(axis=0)
        xr = cen + rho * (cen - sim[-1])
        fr = objective(xr)
        if fr < f[0]:
            xe = cen + rho * chi * (cen - sim[-1])
            fe = objective(xe)
            if fe < fr:
                sim[-1], f[-1] = xe, fe
            else:
                sim[-1], f[-1] = xr, fr
        elif fr < f[-2]:
            sim[-1], f[-1] = xr, fr
        else:
            shrink = False
            if fr < f[-1]:
                xc = cen + psi * rho * (cen - sim[-1])
                fc = objective(xc)
                if fc <= fr:
                    sim[-1], f[-1] = xc, fc
                else:
                    shrink = True
            else:
                xcc = cen - psi * (cen - sim[-1])
                fcc = objective(xcc)
                if fcc < f[-1]:
                    sim[-1], f[-1] = xcc, fcc
                else:
                    shrink = True
            if shrink:
                for i in range(1, k + 1):
                    sim[i] = sim[0] + shr * (sim[i] - sim[0])
                    f[i] = objective(sim[i])
        order = np.argsort(f, kind="stable")
        sim, f = sim[order], f[order]

    theta = np.empty(pm + 2)
    theta[:k] = sim[0]
    if not opt_e:
        theta[pm + 1] = e_fixed
    return theta, float(f[0]), it, bool(converged)
