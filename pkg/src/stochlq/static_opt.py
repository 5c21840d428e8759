"""Static optimization: the anchor point the long-horizon optimum hovers at.

Minimizes the running cost augmented by (1/2) <P(Cx + Du + sigma), .> over
the affine constraint Ax + Bu + b = 0, where P is the stabilizing Riccati
solution.  Solved two independent ways: a dense factorization of the
first-order (KKT) system, and closed forms in terms of the cell-problem
gains; the two routes agreeing is itself a verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellSolution
from .model import LQModel

__all__ = ["StaticOptimum", "StaticOptError", "solve_static_kkt", "static_from_cell", "static_objective"]


class StaticOptError(RuntimeError):
    pass


@dataclass(frozen=True)
class StaticOptimum:
    """Optimal point (x*, u*), multiplier y*, noise loading sigma* and value."""

    x_star: np.ndarray
    u_star: np.ndarray
    y_star: np.ndarray
    sigma_star: np.ndarray
    L_value: float

    def __post_init__(self):
        for name in ("x_star", "u_star", "y_star", "sigma_star"):
            getattr(self, name).setflags(write=False)


def static_objective(model: LQModel, P: np.ndarray, x, u) -> float:
    """Objective L(x, u) = f(x, u) + (1/2) <P(Cx + Du + sigma), Cx + Du + sigma>."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    load = model.C @ x + model.D @ u + model.sigma
    return float(model.running_cost(x, u) + 0.5 * (load @ P @ load))


def _check_invariants(model: LQModel, P, x, u, y):
    feas = model.A @ x + model.B @ u + model.b
    if np.linalg.norm(feas) > 1e-10 * (1.0 + np.linalg.norm(model.b)):
        raise StaticOptError(f"constraint residual {np.linalg.norm(feas):.3e}")
    Psig = P @ model.sigma
    g_x = (
        (model.Q + model.C.T @ P @ model.C) @ x
        + (model.S + model.D.T @ P @ model.C).T @ u
        + model.A.T @ y
        + model.q
        + model.C.T @ Psig
    )
    g_u = (
        (model.S + model.D.T @ P @ model.C) @ x
        + (model.R + model.D.T @ P @ model.D) @ u
        + model.B.T @ y
        + model.r
        + model.D.T @ Psig
    )
    res = max(float(np.linalg.norm(g_x)), float(np.linalg.norm(g_u)))
    if res > 1e-9:
        raise StaticOptError(f"first-order residual {res:.3e}")


def solve_static_kkt(model: LQModel, P: np.ndarray) -> StaticOptimum:
    """Solve the first-order system by one dense factorization.

    Stationarity in x, stationarity in u and the constraint are stacked
    into a (2n + m) square system; positivity of the reduced Hessian under
    the standing hypothesis makes it nonsingular.
    """
    n, m = model.n, model.m
    P = np.atleast_2d(np.asarray(P, dtype=float))
    H_xx = model.Q + model.C.T @ P @ model.C
    H_ux = model.S + model.D.T @ P @ model.C
    H_uu = model.R + model.D.T @ P @ model.D
    kkt = np.zeros((2 * n + m, 2 * n + m))
    kkt[:n, :n] = H_xx
    kkt[:n, n : n + m] = H_ux.T
    kkt[:n, n + m :] = model.A.T
    kkt[n : n + m, :n] = H_ux
    kkt[n : n + m, n : n + m] = H_uu
    kkt[n : n + m, n + m :] = model.B.T
    kkt[n + m :, :n] = model.A
    kkt[n + m :, n : n + m] = model.B

    Psig = P @ model.sigma
    rhs = np.concatenate(
        [-(model.q + model.C.T @ Psig), -(model.r + model.D.T @ Psig), -model.b]
    )
    svals = np.linalg.svd(kkt, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise StaticOptError(
            f"singular first-order system (smallest singular value {svals[-1]:.3e})"
        )
    sol = np.linalg.solve(kkt, rhs)
    x, u, y = sol[:n], sol[n : n + m], sol[n + m :]
    _check_invariants(model, P, x, u, y)
    return StaticOptimum(
        x_star=x,
        u_star=u,
        y_star=y,
        sigma_star=model.C @ x + model.D @ u + model.sigma,
        L_value=static_objective(model, P, x, u),
    )


def static_from_cell(model: LQModel, cell: CellSolution) -> StaticOptimum:
    """Closed-form optimum from the constant gains.

    x* = -(A + B Theta)^-1 (B theta + b), u* = Theta x* + theta,
    y* = P x* + p.
    """
    Acl = model.A + model.B @ cell.Theta_bar
    cond = float(np.linalg.cond(Acl))
    if not np.isfinite(cond) or cond > 1e12:
        raise StaticOptError(f"A + B Theta singular (condition number {cond:.3e})")
    x = -np.linalg.solve(Acl, model.B @ cell.theta_bar + model.b)
    u = cell.Theta_bar @ x + cell.theta_bar
    y = cell.P @ x + cell.p
    _check_invariants(model, cell.P, x, u, y)
    return StaticOptimum(
        x_star=x,
        u_star=u,
        y_star=y,
        sigma_star=model.C @ x + model.D @ u + model.sigma,
        L_value=static_objective(model, cell.P, x, u),
    )
