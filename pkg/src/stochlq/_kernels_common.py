"""Loop kernels written once in njit-compatible numpy.

These run as-is under the numpy backend and are wrapped by ``numba.njit``
in ``_kernels_numba``.  They must stay free of python features numba cannot
compile (no dicts of arrays, no fancy indexing, contiguous linalg inputs).
"""

from __future__ import annotations

import numpy as np


def dre_rk4(A, B, C, D, Q, St, R, h, n_steps, out):
    """Classical 4th-order integration of the matrix Riccati flow.

    ``out`` has shape (n_steps + 1, n, n) with out[0] already holding the
    terminal value in reversed time; entry i then corresponds to horizon
    distance i*h.  ``St`` is the transposed cross-cost (n x m).  Every stage
    result is symmetrized.  Returns 0 on success, the failing step index + 1
    when a non-finite value appears.
    """

    def rhs(P):
        G = R + D.T @ P @ D
        K = P @ B + C.T @ P @ D + St
        X = P @ A + A.T @ P + C.T @ P @ C + Q - K @ np.linalg.solve(G, K.T.copy())
        return 0.5 * (X + X.T)

    for i in range(n_steps):
        P = out[i]
        k1 = rhs(P)
        k2 = rhs(P + (0.5 * h) * k1)
        k3 = rhs(P + (0.5 * h) * k2)
        k4 = rhs(P + h * k3)
        Pn = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            return i + 1
        out[i + 1] = Pn
    return 0


def linear_bode_rk4(AclT_nodes, AclT_mid, h_nodes, h_mid, h, out):
    """Backward 4th-order integration of pdot + Acl(t)^T p + h(t) = 0.

    ``out`` has shape (N + 1, n) with out[N] = terminal value; fills
    out[N-1] ... out[0].  Coefficient arrays hold Acl^T and the forcing at
    the N + 1 nodes and the N interval midpoints.
    """
    n_steps = AclT_mid.shape[0]
    for j in range(n_steps - 1, -1, -1):
        p = out[j + 1]
        k1 = -(AclT_nodes[j + 1] @ p + h_nodes[j + 1])
        k2 = -(AclT_mid[j] @ (p - (0.5 * h) * k1) + h_mid[j])
        k3 = -(AclT_mid[j] @ (p - (0.5 * h) * k2) + h_mid[j])
        k4 = -(AclT_nodes[j] @ (p - h * k3) + h_nodes[j])
        out[j] = p - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return 0
