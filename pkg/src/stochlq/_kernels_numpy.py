"""Pure-numpy backend: one vectorized pass over time, all paths at once.

Accumulation orders mirror the numba path loops exactly (see the canonical
order notes in ``_kernels_numba``), so both backends return bit-identical
arrays for the same seed.
"""

from __future__ import annotations

import numpy as np

from . import _kernels_common, rng

dre_rk4 = _kernels_common.dre_rk4
linear_bode_rk4 = _kernels_common.linear_bode_rk4


def _runcost_vec(Q, S, Rm, qv, rv, X, U):
    n = X.shape[1]
    m = U.shape[1]
    paths = X.shape[0]
    sq = np.zeros(paths)
    for i in range(n):
        for j in range(n):
            sq += Q[i, j] * X[:, i] * X[:, j]
    ss = np.zeros(paths)
    for a in range(m):
        for j in range(n):
            ss += S[a, j] * U[:, a] * X[:, j]
    sr = np.zeros(paths)
    for a in range(m):
        for c in range(m):
            sr += Rm[a, c] * U[:, a] * U[:, c]
    sl = np.zeros(paths)
    for j in range(n):
        sl += qv[j] * X[:, j]
    sm = np.zeros(paths)
    for a in range(m):
        sm += rv[a] * U[:, a]
    return 0.5 * (sq + 2.0 * ss + sr + 2.0 * sl + 2.0 * sm)


def _gains_apply(Theta, theta, X):
    # u[p, a] = theta[a] + sum_j Theta[a, j] x[p, j], ascending j
    paths = X.shape[0]
    U = np.empty((paths, Theta.shape[0]))
    U[:] = theta
    for j in range(Theta.shape[1]):
        U += X[:, j : j + 1] * Theta[:, j]
    return U


def simulate_ensemble(
    A, Bm, Cm, Dm, bv, sv,
    Q, S, Rm, qv, rv,
    Theta_all, theta_all, x0_all,
    seed, n_paths, dt,
    rec_slots,
    X_out, U_out, cost_out, status,
):
    Ksys = x0_all.shape[0]
    n = A.shape[0]
    m = Bm.shape[1]
    n_steps = rec_slots.shape[0] - 1
    sqrt_dt = np.sqrt(dt)
    pkeys = rng.path_keys(seed, np.arange(n_paths))

    Xs = [np.tile(x0_all[k], (n_paths, 1)) for k in range(Ksys)]
    Us = [_gains_apply(Theta_all[k, 0], theta_all[k, 0], Xs[k]) for k in range(Ksys)]
    f_prev = [_runcost_vec(Q, S, Rm, qv, rv, Xs[k], Us[k]) for k in range(Ksys)]
    costs = [np.zeros(n_paths) for _ in range(Ksys)]

    if rec_slots[0] >= 0:
        s0 = rec_slots[0]
        for k in range(Ksys):
            X_out[k, :, s0, :] = Xs[k]
            U_out[k, :, s0, :] = Us[k]
            cost_out[k, :, s0] = costs[k]

    for i in range(n_steps):
        w = rng.step_normals(pkeys, i) * sqrt_dt
        wc = w[:, None]
        for k in range(Ksys):
            X, U = Xs[k], Us[k]
            DR = np.empty((n_paths, n))
            DR[:] = bv
            for j in range(n):
                DR += X[:, j : j + 1] * A[:, j]
            for a in range(m):
                DR += U[:, a : a + 1] * Bm[:, a]
            DF = np.empty((n_paths, n))
            DF[:] = sv
            for j in range(n):
                DF += X[:, j : j + 1] * Cm[:, j]
            for a in range(m):
                DF += U[:, a : a + 1] * Dm[:, a]
            X = X + DR * dt + DF * wc
            U = _gains_apply(Theta_all[k, i + 1], theta_all[k, i + 1], X)
            f_new = _runcost_vec(Q, S, Rm, qv, rv, X, U)
            costs[k] = costs[k] + 0.5 * (f_prev[k] + f_new) * dt
            f_prev[k] = f_new
            Xs[k], Us[k] = X, U
        slot = rec_slots[i + 1]
        if slot >= 0:
            for k in range(Ksys):
                X_out[k, :, slot, :] = Xs[k]
                U_out[k, :, slot, :] = Us[k]
                cost_out[k, :, slot] = costs[k]
                bad = ~np.all(np.abs(Xs[k]) <= 1e100, axis=1)
                fresh = bad & (status[k] == 0)
                if np.any(fresh):
                    status[k, fresh] = i + 1
