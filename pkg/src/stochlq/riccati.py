"""Algebraic and differential Riccati solvers for the control problem.

The stabilizing algebraic solution is computed by Newton-Kleinman
iteration: each step solves the generalized Lyapunov equation of the
current closed loop and refreshes the feedback gain.  The finite-horizon
backward system (quadratic coefficient, linear coefficient, scalar offset
and the induced gains) is integrated with a fixed-step classical
fourth-order scheme from zero terminal data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .model import LQModel, ModelError, validate_model
from .stability import (
    StabilityError,
    closed_loop,
    is_stabilizer,
    solve_generalized_lyapunov,
)

__all__ = [
    "AreSolution",
    "FiniteHorizonSolution",
    "RiccatiError",
    "are_residual",
    "are_gain",
    "solve_are_stabilizing",
    "integrate_dre",
    "dre_step_halving_error",
    "complete_finite_horizon",
    "solve_finite_horizon",
    "value_finite",
    "fh_to_csv",
]


class RiccatiError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def are_residual(model: LQModel, P: np.ndarray) -> np.ndarray:
    """Residual of the algebraic Riccati equation at P."""
    A, B, C, D = model.A, model.B, model.C, model.D
    G = model.R + D.T @ P @ D
    K = P @ B + C.T @ P @ D + model.S.T
    res = P @ A + A.T @ P + C.T @ P @ C + model.Q - K @ np.linalg.solve(G, K.T)
    return 0.5 * (res + res.T)


def are_gain(model: LQModel, P: np.ndarray) -> np.ndarray:
    """Feedback gain -(R + D'PD)^-1 (B'P + D'PC + S) induced by P."""
    G = model.R + model.D.T @ P @ model.D
    return -np.linalg.solve(G, model.B.T @ P + model.D.T @ P @ model.C + model.S)


@dataclass(frozen=True)
class AreSolution:
    """Stabilizing algebraic Riccati solution and its closed-loop gain.

    ``residual_history`` keeps the equation residual of every Newton
    iterate (diagnostics; the decrease is monotone after the first step).
    """

    P: np.ndarray
    Theta_bar: np.ndarray
    newton_iters: int
    final_residual: float
    residual_history: tuple[float, ...] = ()

    def __post_init__(self):
        self.P.setflags(write=False)
        self.Theta_bar.setflags(write=False)


def solve_are_stabilizing(
    model: LQModel,
    Theta0: np.ndarray,
    max_iter: int = 100,
    dP_rtol: float = 1e-12,
    residual_tol: float = 1e-10,
) -> AreSolution:
    """Newton-Kleinman iteration from a certified stabilizing gain.

    Given the stabilizing iterate ``Theta_k``, solve

        (A + B Th)^T P + P (A + B Th) + (C + D Th)^T P (C + D Th)
            = -(Q + Th^T S + S^T Th + Th^T R Th)

    for ``P_k`` and set ``Theta_{k+1} = -(R + D'P_kD)^-1 (B'P_k + D'P_kC + S)``.
    Stops when successive iterates agree to ``dP_rtol`` (relative) or the
    equation residual falls below ``residual_tol``.  Every iterate is
    re-certified; the returned solution satisfies the residual bound 1e-9,
    has R + D'PD positive definite, and its gain is stabilizing.
    """
    report = validate_model(model)
    if not report.h1_ok:
        raise RiccatiError(
            "positivity hypothesis fails: " + "; ".join(report.messages)
        )
    Theta = np.atleast_2d(np.asarray(Theta0, dtype=float))
    if not is_stabilizer(model, Theta).stable:
        raise RiccatiError("initial gain is not stabilizing")

    A, B, C, D = model.A, model.B, model.C, model.D
    Q, S, R = model.Q, model.S, model.R
    history: list[float] = []
    P_prev = None
    for it in range(1, max_iter + 1):
        load = Q + Theta.T @ S + S.T @ Theta + Theta.T @ R @ Theta
        load = 0.5 * (load + load.T)
        P = solve_generalized_lyapunov(closed_loop(model, Theta), load)
        res = float(np.linalg.norm(are_residual(model, P), "fro"))
        history.append(res)
        Theta_next = are_gain(model, P)
        if res <= residual_tol or (
            P_prev is not None
            and np.linalg.norm(P - P_prev, "fro")
            <= dP_rtol * (1.0 + np.linalg.norm(P_prev, "fro"))
        ):
            Theta = Theta_next
            break
        if not is_stabilizer(model, Theta_next).stable:
            raise RiccatiError("Newton step left stabilizing set", history)
        Theta, P_prev = Theta_next, P
    else:
        raise RiccatiError(
            f"ARE not converged after {max_iter} iterations "
            f"(last residual {history[-1]:.3e})",
            history,
        )

    final_res = float(np.linalg.norm(are_residual(model, P), "fro"))
    if final_res > 1e-9:
        raise RiccatiError(f"ARE residual {final_res:.3e} exceeds 1e-9", history)
    G = R + D.T @ P @ D
    if np.linalg.eigvalsh(0.5 * (G + G.T))[0] <= 0:
        raise RiccatiError("R + D'PD is not positive definite", history)
    if not is_stabilizer(model, Theta).stable:
        raise RiccatiError("final gain is not stabilizing", history)
    return AreSolution(
        P=P,
        Theta_bar=Theta,
        newton_iters=it,
        final_residual=final_res,
        residual_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# finite horizon
# ---------------------------------------------------------------------------


def _grid_steps(T: float, h: float) -> int:
    if h <= 0 or T <= 0:
        raise ValueError("T and h must be positive")
    n_steps = int(round(T / h))
    if n_steps < 1 or abs(n_steps * h - T) > 1e-12 * max(1.0, abs(T)):
        raise ValueError(f"step h={h} does not divide horizon T={T}")
    return n_steps


def integrate_dre(model: LQModel, T: float, h: float) -> np.ndarray:
    """Integrate the differential Riccati equation backward from zero.

    Returns the (N + 1, n, n) array of quadratic value coefficients on the
    uniform grid t_i = i*h, i = 0..N, where N = T/h.  Positive
    semidefiniteness and a uniform definiteness margin of R + D'P(t)D
    (at least half the smallest eigenvalue of R) are verified at every node.
    """
    report = validate_model(model)
    if not report.h1_ok:
        raise RiccatiError(
            "positivity hypothesis fails: " + "; ".join(report.messages)
        )
    n_steps = _grid_steps(T, h)
    n = model.n
    out = np.zeros((n_steps + 1, n, n))
    kern = backend.get_kernels()
    bad = kern.dre_rk4(
        np.ascontiguousarray(model.A),
        np.ascontiguousarray(model.B),
        np.ascontiguousarray(model.C),
        np.ascontiguousarray(model.D),
        np.ascontiguousarray(model.Q),
        np.ascontiguousarray(model.S.T),
        np.ascontiguousarray(model.R),
        float(h),
        n_steps,
        out,
    )
    if bad:
        t_bad = T - bad * h
        raise RiccatiError(f"gain matrix lost definiteness at t={t_bad:.6g}")
    P_grid = out[::-1].copy()

    delta = 0.5 * float(np.linalg.eigvalsh(model.R)[0])
    G = model.R + np.matmul(model.D.T, np.matmul(P_grid, model.D))
    min_gain = float(np.min(np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, 1, 2)))))
    if min_gain < delta:
        raise RiccatiError(
            f"gain definiteness margin {min_gain:.3e} fell below delta={delta:.3e}"
        )
    scale = float(np.max(np.abs(P_grid)))
    min_p = float(np.min(np.linalg.eigvalsh(P_grid)))
    if min_p < -1e-10 * (1.0 + scale):
        raise RiccatiError(
            f"quadratic coefficient lost positive semidefiniteness ({min_p:.3e})"
        )
    return P_grid


def dre_step_halving_error(model: LQModel, T: float, h: float) -> float:
    """Max-norm difference between step h and step h/2 solutions on shared nodes."""
    coarse = integrate_dre(model, T, h)
    fine = integrate_dre(model, T, h / 2.0)
    return float(np.max(np.abs(coarse - fine[::2])))


def _midpoints(nodes: np.ndarray) -> np.ndarray:
    """Cubic (4-point) interpolation of node values at interval midpoints."""
    count = nodes.shape[0] - 1
    mid = np.empty((count,) + nodes.shape[1:])
    if count == 0:
        return mid
    if nodes.shape[0] < 4:
        mid[:] = 0.5 * (nodes[:-1] + nodes[1:])
        return mid
    mid[1:-1] = (
        -nodes[0:-3] + 9.0 * nodes[1:-2] + 9.0 * nodes[2:-1] - nodes[3:]
    ) / 16.0
    mid[0] = (5.0 * nodes[0] + 15.0 * nodes[1] - 5.0 * nodes[2] + nodes[3]) / 16.0
    mid[-1] = (nodes[-4] - 5.0 * nodes[-3] + 15.0 * nodes[-2] + 5.0 * nodes[-1]) / 16.0
    return mid


@dataclass(frozen=True)
class FiniteHorizonSolution:
    """Backward-system solution on a uniform grid over [0, T].

    Grids hold the quadratic coefficient P(t), linear coefficient p(t),
    scalar offset p0(t), and the closed-loop gains Theta(t), theta(t), all
    with zero terminal data at t = T.  The value function is
    (1/2)(<P(t)x, x> + 2 <p(t), x> + p0(t)).
    """

    T: float
    grid: np.ndarray
    P_grid: np.ndarray
    p_grid: np.ndarray
    p0_grid: np.ndarray
    Theta_grid: np.ndarray
    theta_grid: np.ndarray
    delta: float

    def __post_init__(self):
        for name in ("grid", "P_grid", "p_grid", "p0_grid", "Theta_grid", "theta_grid"):
            getattr(self, name).setflags(write=False)

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def _locate(self, t: float):
        if t < -1e-9 or t > self.T + 1e-9:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        pos = float(np.clip(t, 0.0, self.T)) / self.h
        j = min(int(math.floor(pos)), len(self.grid) - 2)
        w = pos - j
        return j, w

    def coefficients_at(self, t: float):
        """Linearly interpolated (P, p, p0) at time t."""
        j, w = self._locate(t)
        P = (1.0 - w) * self.P_grid[j] + w * self.P_grid[j + 1]
        p = (1.0 - w) * self.p_grid[j] + w * self.p_grid[j + 1]
        p0 = (1.0 - w) * self.p0_grid[j] + w * self.p0_grid[j + 1]
        return P, p, p0

    def gains_at(self, t: float):
        """Linearly interpolated (Theta, theta) at time t."""
        j, w = self._locate(t)
        Theta = (1.0 - w) * self.Theta_grid[j] + w * self.Theta_grid[j + 1]
        theta = (1.0 - w) * self.theta_grid[j] + w * self.theta_grid[j + 1]
        return Theta, theta


def complete_finite_horizon(
    model: LQModel, P_grid: np.ndarray, T: float
) -> FiniteHorizonSolution:
    """Derive gains, linear coefficient and scalar offset from a P grid.

    The gains come pointwise from P; the linear coefficient integrates the
    backward linear equation with gains interpolated cubically at interval
    midpoints; the scalar offset uses composite trapezoid quadrature on the
    same grid (the documented accuracy floor of the value function).
    """
    P_grid = np.asarray(P_grid, dtype=float)
    n_nodes = P_grid.shape[0]
    if n_nodes < 2:
        raise ValueError("P grid needs at least two nodes")
    n, m = model.n, model.m
    h = T / (n_nodes - 1)
    grid = np.arange(n_nodes) * h

    A, B, C, D = model.A, model.B, model.C, model.D
    S, R = model.S, model.R
    bvec, sig, qvec, rvec = model.b, model.sigma, model.q, model.r

    G = R + np.matmul(D.T, np.matmul(P_grid, D))
    delta = 0.5 * float(np.linalg.eigvalsh(R)[0])
    if float(np.min(np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, 1, 2))))) < delta:
        raise RiccatiError("gain matrix definiteness margin violated on grid")
    rhs_Theta = np.matmul(B.T, P_grid) + np.matmul(D.T, np.matmul(P_grid, C)) + S
    Theta_grid = -np.linalg.solve(G, rhs_Theta)

    Acl = A + np.matmul(B, Theta_grid)
    AclT = np.ascontiguousarray(np.swapaxes(Acl, 1, 2))
    Ccl = C + np.matmul(D, Theta_grid)
    Psig = P_grid @ sig
    hvec = (
        np.matmul(np.swapaxes(Ccl, 1, 2), Psig[:, :, None])[:, :, 0]
        + P_grid @ bvec
        + qvec
        + np.matmul(np.swapaxes(Theta_grid, 1, 2), rvec)
    )

    p_grid = np.zeros((n_nodes, n))
    kern = backend.get_kernels()
    kern.linear_bode_rk4(
        AclT,
        np.ascontiguousarray(_midpoints(AclT)),
        np.ascontiguousarray(hvec),
        np.ascontiguousarray(_midpoints(hvec)),
        float(h),
        p_grid,
    )

    v = (
        np.matmul(B.T, p_grid[:, :, None])[:, :, 0]
        + np.matmul(D.T, Psig[:, :, None])[:, :, 0]
        + rvec
    )
    theta_grid = -np.linalg.solve(G, v[:, :, None])[:, :, 0]

    # offset integrand; v' G^-1 v equals -<v, theta>
    integrand = Psig @ sig + 2.0 * (p_grid @ bvec) + np.sum(v * theta_grid, axis=1)
    seg = 0.5 * h * (integrand[:-1] + integrand[1:])
    p0_grid = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])

    return FiniteHorizonSolution(
        T=float(T),
        grid=grid,
        P_grid=P_grid.copy(),
        p_grid=p_grid,
        p0_grid=p0_grid,
        Theta_grid=Theta_grid,
        theta_grid=theta_grid,
        delta=delta,
    )


def solve_finite_horizon(model: LQModel, T: float, h: float) -> FiniteHorizonSolution:
    """Integrate the quadratic coefficient and complete the backward system."""
    return complete_finite_horizon(model, integrate_dre(model, T, h), T)


def value_finite(sol: FiniteHorizonSolution, t: float, x: np.ndarray) -> float:
    """Value (1/2)(<P(t)x, x> + 2 <p(t), x> + p0(t)), interpolating between nodes."""
    x = np.asarray(x, dtype=float)
    P, p, p0 = sol.coefficients_at(t)
    return 0.5 * (x @ P @ x + 2.0 * (p @ x) + p0)


def fh_to_csv(sol: FiniteHorizonSolution, path) -> None:
    """Write one row per grid node: t, vec(P), p, p0, vec(Theta), theta."""
    n = sol.P_grid.shape[1]
    m = sol.Theta_grid.shape[1]
    cols = (
        ["t"]
        + [f"P_{i}_{j}" for i in range(n) for j in range(n)]
        + [f"p_{i}" for i in range(n)]
        + ["p0"]
        + [f"Theta_{a}_{j}" for a in range(m) for j in range(n)]
        + [f"theta_{a}" for a in range(m)]
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(sol.grid):
            row = (
                [t]
                + list(sol.P_grid[i].reshape(-1))
                + list(sol.p_grid[i])
                + [sol.p0_grid[i]]
                + list(sol.Theta_grid[i].reshape(-1))
                + list(sol.theta_grid[i])
            )
            fh.write(",".join(repr(float(val)) for val in row) + "\n")
