"""Numba backend: jitted path loops, parallel over Monte Carlo paths.

Noise comes pre-generated from :mod:`stochlq.rng` in per-path blocks, so the
floating-point work here matches the numpy backend operation for operation;
the two backends produce bit-identical trajectories.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from . import _kernels_common, rng

dre_rk4 = njit(cache=True)(_kernels_common.dre_rk4)
linear_bode_rk4 = njit(cache=True)(_kernels_common.linear_bode_rk4)

#: Cap on per-block noise storage (floats), ~256 MB.
_BLOCK_BUDGET = 32_000_000


@njit(cache=True)
def _runcost(Q, S, Rm, qv, rv, x, u):
    # canonical accumulation order shared with the numpy backend:
    # Q pairs (i,j) ascending, S pairs (a,j), R pairs (a,c), then q, r
    n = x.shape[0]
    m = u.shape[0]
    sq = 0.0
    for i in range(n):
        for j in range(n):
            sq += Q[i, j] * x[i] * x[j]
    ss = 0.0
    for a in range(m):
        for j in range(n):
            ss += S[a, j] * u[a] * x[j]
    sr = 0.0
    for a in range(m):
        for c in range(m):
            sr += Rm[a, c] * u[a] * u[c]
    sl = 0.0
    for j in range(n):
        sl += qv[j] * x[j]
    sm = 0.0
    for a in range(m):
        sm += rv[a] * u[a]
    return 0.5 * (sq + 2.0 * ss + sr + 2.0 * sl + 2.0 * sm)


@njit(cache=True, parallel=True)
def _simulate_block(
    A, Bm, Cm, Dm, bv, sv,
    Q, S, Rm, qv, rv,
    Theta_all, theta_all, x0_all,
    dW, dt, rec_slots,
    X_out, U_out, cost_out, status, path_offset,
):
    Ksys = x0_all.shape[0]
    n = A.shape[0]
    m = Bm.shape[1]
    n_paths = dW.shape[0]
    n_steps = dW.shape[1]
    for p in prange(n_paths):
        gp = path_offset + p
        x = np.empty(n)
        xn = np.empty(n)
        u = np.empty(m)
        for k in range(Ksys):
            for j in range(n):
                x[j] = x0_all[k, j]
            for a in range(m):
                acc = theta_all[k, 0, a]
                for j in range(n):
                    acc += Theta_all[k, 0, a, j] * x[j]
                u[a] = acc
            f_prev = _runcost(Q, S, Rm, qv, rv, x, u)
            cost = 0.0
            if rec_slots[0] >= 0:
                s0 = rec_slots[0]
                for j in range(n):
                    X_out[k, gp, s0, j] = x[j]
                for a in range(m):
                    U_out[k, gp, s0, a] = u[a]
                cost_out[k, gp, s0] = cost
            for i in range(n_steps):
                w = dW[p, i]
                for ii in range(n):
                    dr = bv[ii]
                    for j in range(n):
                        dr += A[ii, j] * x[j]
                    for a in range(m):
                        dr += Bm[ii, a] * u[a]
                    df = sv[ii]
                    for j in range(n):
                        df += Cm[ii, j] * x[j]
                    for a in range(m):
                        df += Dm[ii, a] * u[a]
                    xn[ii] = x[ii] + dr * dt + df * w
                for j in range(n):
                    x[j] = xn[j]
                for a in range(m):
                    acc = theta_all[k, i + 1, a]
                    for j in range(n):
                        acc += Theta_all[k, i + 1, a, j] * x[j]
                    u[a] = acc
                f_new = _runcost(Q, S, Rm, qv, rv, x, u)
                cost += 0.5 * (f_prev + f_new) * dt
                f_prev = f_new
                slot = rec_slots[i + 1]
                if slot >= 0:
                    for j in range(n):
                        X_out[k, gp, slot, j] = x[j]
                    for a in range(m):
                        U_out[k, gp, slot, a] = u[a]
                    cost_out[k, gp, slot] = cost
                    if status[k, gp] == 0:
                        finite = True
                        for j in range(n):
                            if not (abs(x[j]) <= 1e100):
                                finite = False
                        if not finite:
                            status[k, gp] = i + 1


def simulate_ensemble(
    A, Bm, Cm, Dm, bv, sv,
    Q, S, Rm, qv, rv,
    Theta_all, theta_all, x0_all,
    seed, n_paths, dt,
    rec_slots,
    X_out, U_out, cost_out, status,
):
    """Run all paths in noise blocks sized to the memory budget."""
    n_steps = rec_slots.shape[0] - 1
    block = max(1, min(n_paths, _BLOCK_BUDGET // max(1, n_steps)))
    steps = np.arange(n_steps)
    lo = 0
    while lo < n_paths:
        hi = min(n_paths, lo + block)
        dW = rng.scaled_increments(seed, np.arange(lo, hi), steps, dt)
        _simulate_block(
            A, Bm, Cm, Dm, bv, sv,
            Q, S, Rm, qv, rv,
            Theta_all, theta_all, x0_all,
            dW, dt, rec_slots,
            X_out, U_out, cost_out, status, lo,
        )
        lo = hi
