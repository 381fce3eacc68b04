"""Compiled inner loops for the ADMM coefficient update.

Matrices are handled in row form: row j holds the coefficients that
represent pixel j (column j of the coefficient matrix).
"""
import numpy as np
from numba import njit

ROOT_TOL = 1e-12


@njit(cache=True)
def _excess(v, j, t, tau):
    s = 0.0
    n = 0
    for i in range(v.shape[0]):
        if i == j:
            continue
        z = v[i] - tau
        if z > t:
            s += z - t
            n += 1
        elif z < -t:
            s += z + t
            n += 1
    return s - 1.0, n


@njit(cache=True)
def affine_shift(v, j, t, guess):
    """Root tau of sum_{i != j} soft(v_i - tau, t) = 1.

    The sum is decreasing and piecewise linear in tau. A Newton step equals
    the exact root for the current active set; steps leaving the bracket fall
    back to false position, then bisection.
    """
    top = -np.inf
    bottom = np.inf
    for i in range(v.shape[0]):
        if i != j:
            if v[i] > top:
                top = v[i]
            if v[i] < bottom:
                bottom = v[i]
    hi = top - t
    lo = min(hi - 1.0, bottom + t)
    f_lo = np.nan
    f_hi = np.nan
    tau = guess
    if not (tau >= lo and tau <= hi):
        tau = hi - 1.0
    for _ in range(200):
        f, n = _excess(v, j, t, tau)
        if abs(f) <= ROOT_TOL:
            return tau
        if f > 0:
            lo = tau
            f_lo = f
        else:
            hi = tau
            f_hi = f
        if n > 0:
            step = tau + f / n
        else:
            step = max(top - t - 1.0, lo)
        if step > lo and step < hi:
            tau = step
        elif f_lo == f_lo and f_hi == f_hi and f_lo != f_hi:
            sec = lo + f_lo * (hi - lo) / (f_lo - f_hi)
            tau = sec if (sec > lo and sec < hi) else 0.5 * (lo + hi)
        else:
            tau = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, abs(lo)):
            break
    return tau


@njit(cache=True)
def prox_rows(vt, t, tau):
    """Row-form prox of t*||.||_1 over {c_jj = 0, sum_i c_ji = 1}."""
    P = vt.shape[0]
    out = np.zeros_like(vt)
    for j in range(P):
        v = vt[j]
        tj = affine_shift(v, j, t, tau[j])
        tau[j] = tj
        for i in range(P):
            if i == j:
                continue
            z = v[i] - tj
            if z > t:
                out[j, i] = z - t
            elif z < -t:
                out[j, i] = z + t
    return out


@njit(cache=True)
def admm_sweep(lt, xt, ut, ct, cbar, inv_shift, rho, alpha, t, tau, scratch):
    """One fused c/u update in row form.

    Returns (max|a - c|, max|dc|, ||du||^2 + ||dc||^2); du = a - c.

    For every row j::

        v  = xt[j] * inv_shift + lt[j] + ut[j]        # a + u
        c  = soft(v - tau_j, t) with c_jj = 0, sum c = 1
        u  = v - c
        xt = rho (c - u) + alpha cbar                 # next right-hand side
    """
    P = lt.shape[0]
    r_eq = 0.0
    r_dc = 0.0
    merit = 0.0
    for j in range(P):
        for i in range(P):
            scratch[i] = xt[j, i] * inv_shift + lt[j, i] + ut[j, i]
        tj = affine_shift(scratch, j, t, tau[j])
        tau[j] = tj
        for i in range(P):
            vi = scratch[i]
            cn = 0.0
            if i != j:
                z = vi - tj
                if z > t:
                    cn = z - t
                elif z < -t:
                    cn = z + t
            un = vi - cn
            d = abs(un - ut[j, i])
            merit += d * d
            if d > r_eq:
                r_eq = d
            d = abs(cn - ct[j, i])
            merit += d * d
            if d > r_dc:
                r_dc = d
            ct[j, i] = cn
            ut[j, i] = un
            xt[j, i] = rho * (cn - un) + alpha * cbar[j, i]
    return r_eq, r_dc, merit
