"""Compiled rollout with a hand-written adjoint.

Paths are processed in fixed chunks; each chunk accumulates its own gradient
row and the rows are summed in chunk order, so results do not depend on the
number of threads.  ``noise`` holds raw uniforms in exact mode and their
logits in relaxed mode.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

GRID = 0
LINEAR = 1
BILINEAR = 2
ADAPTIVE = 3

CHUNK = 256
_P_CLAMP = 1e-12


@njit(cache=True)
def _segment(rates, r):
    k = np.searchsorted(rates, r, side="right") - 1
    if k < 0:
        k = 0
    if k > rates.size - 2:
        k = rates.size - 2
    return k


@njit(cache=True)
def _error(u, u_star):
    # returns (err, d err / du)
    if u < u_star:
        return (u - u_star) / u_star, 1.0 / u_star
    if u_star >= 1.0:
        return 0.0, 0.0
    return (u - u_star) / (1.0 - u_star), 1.0 / (1.0 - u_star)


@njit(cache=True)
def _relaxed_count(p, noise_row, eps):
    # returns (count, d count / d p)
    if p <= 0.0:
        return 0.0, 0.0
    pc = p
    inside = True
    if pc < _P_CLAMP:
        pc = _P_CLAMP
        inside = False
    elif pc > 1.0 - _P_CLAMP:
        pc = 1.0 - _P_CLAMP
        inside = False
    lp = np.log(pc) - np.log1p(-pc)
    c = 0.0
    n_lin = 0
    for j in range(noise_row.size):
        x = lp + noise_row[j]
        if x >= eps:
            c += 1.0
        elif x > -eps:
            c += (x + eps) / (2.0 * eps)
            n_lin += 1
    d = 0.0
    if inside:
        d = n_lin / (2.0 * eps) / (pc * (1.0 - pc))
    return c, d


@njit(cache=True)
def _exact_count(p, noise_row):
    c = 0.0
    thr = 1.0 - p
    for j in range(noise_row.size):
        if noise_row[j] >= thr:
            c += 1.0
    return c


@njit(parallel=True, cache=True)
def rollout(kind, theta, m, delta, n_steps, tau, horizon, phi, r_bar, eta, u_star, r_lo, r_hi,
            k_rates, k_lp, k_lm, level0, noise, relaxed, eps, want_grad):
    """Simulate every path; return per-path objective, terminal state and summed gradient."""
    n_paths = level0.size
    n_jump = noise.shape[3]
    n_theta = theta.size
    n_chunks = (n_paths + CHUNK - 1) // CHUNK
    obj = np.empty(n_paths)
    lev_T = np.empty(n_paths)
    x_T = np.empty(n_paths)
    q_T = np.empty(n_paths)
    g_rows = np.zeros((n_chunks if want_grad else 1, n_theta if want_grad else 1))
    scale = tau / n_jump

    for c in prange(n_chunks):
        lev = np.empty(n_steps + 1)
        uu = np.empty(n_steps)
        rr = np.empty(n_steps)
        cmask = np.empty(n_steps)
        drdl = np.empty(n_steps)
        slp = np.empty(n_steps)
        slm = np.empty(n_steps)
        dcp = np.empty(n_steps)
        dcm = np.empty(n_steps)
        free = np.empty(n_steps + 1)
        l0 = np.empty(n_steps, dtype=np.int64)
        ww = np.empty(n_steps)
        rt = np.empty(n_steps)
        er = np.empty(n_steps)
        der = np.empty(n_steps)
        cv = np.empty(n_steps)
        for k in range(c * CHUNK, min((c + 1) * CHUNK, n_paths)):
            level = level0[k]
            x = 0.0
            q = 0.0
            lev[0] = level
            free[0] = 1.0
            target = 0.0
            for i in range(n_steps):
                u = 1.0 if level >= m else level * delta
                uu[i] = u
                # policy
                if kind == GRID:
                    b = int(np.floor(level))
                    if b >= m:
                        b = m - 1
                    if b < 0:
                        b = 0
                    w = level - b
                    lo_v = theta[b * n_steps + i]
                    hi_v = theta[(b + 1) * n_steps + i]
                    r_raw = (1.0 - w) * lo_v + w * hi_v
                    drdl[i] = hi_v - lo_v
                    l0[i] = b
                    ww[i] = w
                elif kind == LINEAR:
                    r_raw = theta[0] + u / u_star * theta[1]
                    drdl[i] = theta[1] / u_star * delta
                elif kind == BILINEAR:
                    if u < u_star:
                        r_raw = theta[0] + u / u_star * theta[1]
                        drdl[i] = theta[1] / u_star * delta
                    elif u_star >= 1.0:
                        r_raw = theta[0] + theta[1]
                        drdl[i] = 0.0
                    else:
                        r_raw = theta[0] + theta[1] + (u - u_star) / (1.0 - u_star) * theta[2]
                        drdl[i] = theta[2] / (1.0 - u_star) * delta
                else:
                    e, de = _error(u, u_star)
                    if i == 0:
                        target = theta[0]
                    else:
                        target = target * np.exp(theta[1] * er[i - 1] * tau)
                    if u < u_star:
                        curve = (1.0 - theta[2]) * e + 1.0
                        dcurve = (1.0 - theta[2]) * de
                    else:
                        curve = (theta[3] - 1.0) * e + 1.0
                        dcurve = (theta[3] - 1.0) * de
                    r_raw = target * curve
                    drdl[i] = target * dcurve * delta
                    rt[i] = target
                    er[i] = e
                    der[i] = de
                    cv[i] = curve
                r = r_raw
                cmask[i] = 1.0
                # the bounds themselves pass the gradient, so projected
                # parameters sitting on a bound can move back inside
                if r < r_lo:
                    r = r_lo
                    cmask[i] = 0.0
                elif r > r_hi:
                    r = r_hi
                    cmask[i] = 0.0
                rr[i] = r
                x += r * u * tau
                q += phi * (r - r_bar) * (r - r_bar) * tau
                # intensities
                s = _segment(k_rates, r)
                h = k_rates[s + 1] - k_rates[s]
                t = (r - k_rates[s]) / h
                lam_p = k_lp[s] + t * (k_lp[s + 1] - k_lp[s])
                lam_m = k_lm[s] + t * (k_lm[s + 1] - k_lm[s])
                slp[i] = (k_lp[s + 1] - k_lp[s]) / h
                slm[i] = (k_lm[s + 1] - k_lm[s]) / h
                if level >= m:
                    lam_p = 0.0
                    slp[i] = 0.0
                if level <= 0.0:
                    lam_m = 0.0
                    slm[i] = 0.0
                pp = lam_p * scale
                pm = lam_m * scale
                if relaxed:
                    cp, dcp[i] = _relaxed_count(pp, noise[k, i, 0], eps)
                    cm, dcm[i] = _relaxed_count(pm, noise[k, i, 1], eps)
                else:
                    cp = _exact_count(pp, noise[k, i, 0])
                    cm = _exact_count(pm, noise[k, i, 1])
                level = level + cp - cm
                free[i + 1] = 1.0
                if level < 0.0:
                    level = 0.0
                    free[i + 1] = 0.0
                elif level > m:
                    level = float(m)
                    free[i + 1] = 0.0
                lev[i + 1] = level

            u_T = 1.0 if level >= m else level * delta
            excess = u_T - u_star if u_T > u_star else 0.0
            obj[k] = (x - eta * excess * excess - q) / horizon
            lev_T[k] = level
            x_T[k] = x
            q_T[k] = q
            if not want_grad:
                continue

            # reverse sweep
            gl = -2.0 * eta * excess * delta / horizon
            rt_bar = 0.0
            pend = 0.0
            for i in range(n_steps - 1, -1, -1):
                g = gl * free[i + 1]
                glev = g
                r = rr[i]
                r_bar_adj = (g * dcp[i] * slp[i] - g * dcm[i] * slm[i]) * scale
                r_bar_adj += (uu[i] * tau - 2.0 * phi * (r - r_bar) * tau) / horizon
                glev += r * tau * delta / horizon
                a = r_bar_adj * cmask[i]
                if kind == GRID:
                    b = l0[i]
                    g_rows[c, b * n_steps + i] += a * (1.0 - ww[i])
                    g_rows[c, (b + 1) * n_steps + i] += a * ww[i]
                    glev += a * drdl[i]
                elif kind == LINEAR:
                    g_rows[c, 0] += a
                    g_rows[c, 1] += a * uu[i] / u_star
                    glev += a * drdl[i]
                elif kind == BILINEAR:
                    g_rows[c, 0] += a
                    if uu[i] < u_star:
                        g_rows[c, 1] += a * uu[i] / u_star
                    else:
                        g_rows[c, 1] += a
                        if u_star < 1.0:
                            g_rows[c, 2] += a * (uu[i] - u_star) / (1.0 - u_star)
                    glev += a * drdl[i]
                else:
                    rt_i = rt_bar + a * cv[i]
                    if uu[i] < u_star:
                        g_rows[c, 2] += -a * rt[i] * er[i]
                    else:
                        g_rows[c, 3] += a * rt[i] * er[i]
                    glev += a * drdl[i] + pend
                    if i > 0:
                        g_rows[c, 1] += rt_i * rt[i] * er[i - 1] * tau
                        pend = rt_i * rt[i] * theta[1] * der[i - 1] * tau * delta
                        rt_bar = rt_i * np.exp(theta[1] * er[i - 1] * tau)
                    else:
                        g_rows[c, 0] += rt_i
                gl = glev

    grad = np.zeros(n_theta)
    if want_grad:
        for c in range(n_chunks):
            for j in range(n_theta):
                grad[j] += g_rows[c, j]
    return obj, lev_T, x_T, q_T, grad
