"""Compiled inner loops for the segment fitter.

The grid solve and the damped Gauss-Newton polish dominate the cost of
change-point detection, which evaluates thousands of small least-squares
problems per series; both are compiled with numba.  The surrounding
validation, candidate ranking, and covariance logic stay in plain numpy.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def grid_solve(t, y, lag1, lag2, b3, b4):
    """Closed-form linear coefficients and rss for every (b3, b4) candidate."""
    G = b3.shape[0]
    n = t.shape[0]
    coef = np.empty((G, 4))
    rss = np.empty(G)
    X = np.empty((n, 4))
    for i in range(n):
        X[i, 0] = 1.0
        X[i, 2] = lag1[i]
        X[i, 3] = lag2[i]
    A = np.empty((4, 4))
    b = np.empty(4)
    for g in range(G):
        for i in range(n):
            X[i, 1] = 0.5 * math.erfc(-(b3[g] + b4[g] * t[i]) * _SQRT1_2)
        for j in range(4):
            b[j] = 0.0
            for k in range(j, 4):
                acc = 0.0
                for i in range(n):
                    acc += X[i, j] * X[i, k]
                A[j, k] = acc
                A[k, j] = acc
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * y[i]
            b[j] = acc
        # tiny ridge keeps degenerate candidates (constant Phi) solvable; the
        # winner is re-polished afterwards
        tr = (A[0, 0] + A[1, 1] + A[2, 2] + A[3, 3]) / 4.0
        ridge = 1e-10 * max(tr, 1.0)
        for k in range(4):
            A[k, k] += ridge
        c = np.linalg.solve(A, b)
        s = 0.0
        for i in range(n):
            r = y[i] - (c[0] + c[1] * X[i, 1] + c[2] * lag1[i] + c[3] * lag2[i])
            s += r * r
        for k in range(4):
            coef[g, k] = c[k]
        rss[g] = s
    return coef, rss


@njit(cache=True)
def grid_solve_no_ar(t, y, b3, b4):
    """Intercept-and-curve-only coefficients and rss for every candidate.

    Dropping the lag columns gives starting points where the curve itself,
    not the autoregression, explains the data; on clean sigmoid series the
    lag-based candidates sit in local minima the polish cannot escape.
    """
    G = b3.shape[0]
    n = t.shape[0]
    coef = np.empty((G, 2))
    rss = np.empty(G)
    Phi = np.empty(n)
    for g in range(G):
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        sy = 0.0
        sy1 = 0.0
        for i in range(n):
            p = 0.5 * math.erfc(-(b3[g] + b4[g] * t[i]) * _SQRT1_2)
            Phi[i] = p
            s1 += p
            s2 += p * p
            sy += y[i]
            sy1 += y[i] * p
        s0 = float(n)
        tr = (s0 + s2) / 2.0
        ridge = 1e-10 * max(tr, 1.0)
        a00 = s0 + ridge
        a11 = s2 + ridge
        det = a00 * a11 - s1 * s1
        c0 = (a11 * sy - s1 * sy1) / det
        c1 = (a00 * sy1 - s1 * sy) / det
        s = 0.0
        for i in range(n):
            r = y[i] - (c0 + c1 * Phi[i])
            s += r * r
        coef[g, 0] = c0
        coef[g, 1] = c1
        rss[g] = s
    return coef, rss


@njit(cache=True)
def lm_refine(beta0, t, y, lag1, lag2, max_iter, rss_rtol, step_tol,
              max_abs_slope):
    """Damped Gauss-Newton polish with the inner slope pinned to its bound.

    Returns (beta, rss, iterations, converged) with converged as 0/1.
    """
    n = t.shape[0]
    p = 6
    beta = beta0.copy()
    J = np.empty((n, p))
    for i in range(n):
        J[i, 0] = 1.0
        J[i, 4] = lag1[i]
        J[i, 5] = lag2[i]
    u = np.empty(n)
    Phi = np.empty(n)
    r = np.empty(n)
    rss = 0.0
    for i in range(n):
        ui = beta[2] + beta[3] * t[i]
        u[i] = ui
        Phi[i] = 0.5 * math.erfc(-ui * _SQRT1_2)
        ri = y[i] - (beta[0] + beta[1] * Phi[i]
                     + beta[4] * lag1[i] + beta[5] * lag2[i])
        r[i] = ri
        rss += ri * ri

    u_trial = np.empty(n)
    Phi_trial = np.empty(n)
    r_trial = np.empty(n)
    JtJ = np.empty((p, p))
    g = np.empty(p)
    step = np.empty(p)
    trial = np.empty(p)
    Af = np.empty((5, 5))
    gf = np.empty(5)
    free = (0, 1, 2, 4, 5)
    lam = 1e-3
    converged = 0
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        for i in range(n):
            phi_i = _INV_SQRT_2PI * math.exp(-0.5 * u[i] * u[i])
            J[i, 1] = Phi[i]
            J[i, 2] = beta[1] * phi_i
            J[i, 3] = J[i, 2] * t[i]
        for j in range(p):
            for k in range(j, p):
                acc = 0.0
                for i in range(n):
                    acc += J[i, j] * J[i, k]
                JtJ[j, k] = acc
                JtJ[k, j] = acc
            acc = 0.0
            for i in range(n):
                acc += J[i, j] * r[i]
            g[j] = acc
        trace = 0.0
        for k in range(p):
            trace += JtJ[k, k]
        scale = max(trace / p, 1e-30)
        accepted = False
        rss_trial = 0.0
        for _ in range(50):
            A = JtJ.copy()
            damp = lam * scale
            for k in range(p):
                A[k, k] += damp
            sf6 = np.linalg.solve(A, g)
            for k in range(p):
                step[k] = sf6[k]
            target = beta[3] + step[3]
            if abs(target) > max_abs_slope:
                # slope hits its bound: pin it there and re-solve the
                # remaining five coordinates of the damped normal equations
                s3 = math.copysign(max_abs_slope, target) - beta[3]
                for a in range(5):
                    fa = free[a]
                    gf[a] = g[fa] - A[fa, 3] * s3
                    for c in range(5):
                        Af[a, c] = A[fa, free[c]]
                sf5 = np.linalg.solve(Af, gf)
                for a in range(5):
                    step[free[a]] = sf5[a]
                step[3] = s3
            ok = True
            for k in range(p):
                trial[k] = beta[k] + step[k]
                if not math.isfinite(trial[k]):
                    ok = False
            rss_trial = 0.0
            if ok:
                for i in range(n):
                    ui = trial[2] + trial[3] * t[i]
                    u_trial[i] = ui
                    Phi_trial[i] = 0.5 * math.erfc(-ui * _SQRT1_2)
                    ri = y[i] - (trial[0] + trial[1] * Phi_trial[i]
                                 + trial[4] * lag1[i] + trial[5] * lag2[i])
                    r_trial[i] = ri
                    rss_trial += ri * ri
                if math.isfinite(rss_trial) and rss_trial <= rss:
                    accepted = True
                    break
            lam *= 10.0
            if lam > 1e14:
                break
        if not accepted:
            if rss <= 1e-24:  # already at (numerical) zero residual
                converged = 1
            break
        improvement = rss - rss_trial
        for k in range(p):
            beta[k] = trial[k]
        for i in range(n):
            u[i] = u_trial[i]
            Phi[i] = Phi_trial[i]
            r[i] = r_trial[i]
        rss = rss_trial
        lam = max(lam / 10.0, 1e-12)
        step_sq = 0.0
        for k in range(p):
            step_sq += step[k] * step[k]
        if (improvement <= rss_rtol * max(rss, 1e-30)
                or math.sqrt(step_sq) <= step_tol):
            converged = 1
            break
    return beta, rss, iterations, converged
