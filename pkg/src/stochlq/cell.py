"""Constant-coefficient value problem: Hamiltonians and the additive eigenvalue.

Seeks a quadratic V(x) = (1/2)(<Px, x> + 2 <p, x> + p0) and a constant c0
with H(x, V_x(x), V_xx(x)) = c0 for all x, where H is the minimized
Hamiltonian of the control problem.  Built from the stabilizing algebraic
Riccati solution; the special square structure (B = R = I, C = D = S = 0,
symmetric A) additionally admits an explicit enumeration of all
sign-pattern solutions, which demonstrates that c0 need not be unique.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .model import LQModel, ModelError
from .riccati import AreSolution
from .stability import is_stabilizer

__all__ = [
    "CellError",
    "CellSolution",
    "HamiltonianEval",
    "hamiltonian",
    "hamiltonian_at",
    "homogeneous_hamiltonian",
    "solve_cell",
    "cell_residual",
    "enumerate_cell_solutions_special",
    "dump_cell_solution",
    "load_cell_solution",
]


class CellError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianEval:
    """Minimized Hamiltonian value and the minimizing control."""

    value: float
    minimizer: np.ndarray


def hamiltonian_at(
    model: LQModel, x, p_vec, P_mat, u, homogeneous: bool = False
) -> float:
    """Pre-minimization Hamiltonian at a specific control u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p_vec = np.asarray(p_vec, dtype=float)
    P_mat = np.atleast_2d(np.asarray(P_mat, dtype=float))
    b = np.zeros(model.n) if homogeneous else model.b
    sig = np.zeros(model.n) if homogeneous else model.sigma
    qv = np.zeros(model.n) if homogeneous else model.q
    rv = np.zeros(model.m) if homogeneous else model.r
    drift = model.A @ x + model.B @ u + b
    diff = model.C @ x + model.D @ u + sig
    running = 0.5 * (
        x @ model.Q @ x
        + 2.0 * (u @ model.S @ x)
        + u @ model.R @ u
        + 2.0 * (qv @ x)
        + 2.0 * (rv @ u)
    )
    return float(drift @ p_vec + 0.5 * (diff @ P_mat @ diff) + running)


def _hamiltonian(model, x, p_vec, P_mat, homogeneous):
    x = np.asarray(x, dtype=float)
    p_vec = np.asarray(p_vec, dtype=float)
    P_mat = np.atleast_2d(np.asarray(P_mat, dtype=float))
    b = np.zeros(model.n) if homogeneous else model.b
    sig = np.zeros(model.n) if homogeneous else model.sigma
    qv = np.zeros(model.n) if homogeneous else model.q
    rv = np.zeros(model.m) if homogeneous else model.r

    G = model.R + model.D.T @ P_mat @ model.D
    G = 0.5 * (G + G.T)
    min_eig = float(np.linalg.eigvalsh(G)[0])
    if min_eig <= 0:
        raise CellError(
            f"R + D'PD not positive definite (min eigenvalue {min_eig:.3e})"
        )
    v = (model.D.T @ P_mat @ model.C + model.S) @ x + model.D.T @ P_mat @ sig \
        + model.B.T @ p_vec + rv
    u_hat = -np.linalg.solve(G, v)
    value = float(
        (model.A.T @ p_vec) @ x
        + p_vec @ b
        + 0.5
        * (
            x @ (model.C.T @ P_mat @ model.C + model.Q) @ x
            + 2.0 * (x @ (model.C.T @ P_mat @ sig + qv))
            + sig @ P_mat @ sig
            - v @ np.linalg.solve(G, v)
        )
    )
    direct = hamiltonian_at(model, x, p_vec, P_mat, u_hat, homogeneous=homogeneous)
    if abs(value - direct) > 1e-10 * (1.0 + abs(value)):
        raise CellError(
            f"closed-form Hamiltonian {value!r} disagrees with evaluation at "
            f"the minimizer {direct!r}"
        )
    return HamiltonianEval(value=value, minimizer=u_hat)


def hamiltonian(model: LQModel, x, p_vec, P_mat) -> HamiltonianEval:
    """Minimized Hamiltonian min_u H(x, p, P, u) with its minimizer.

    Uses the closed form obtained by completing the square in u; the value
    is cross-checked against direct evaluation at the minimizer.
    """
    return _hamiltonian(model, x, p_vec, P_mat, homogeneous=False)


def homogeneous_hamiltonian(model: LQModel, x, p_vec, P_mat) -> HamiltonianEval:
    """Minimized Hamiltonian with the offsets b, sigma, q, r forced to zero."""
    return _hamiltonian(model, x, p_vec, P_mat, homogeneous=True)


@dataclass(frozen=True)
class CellSolution:
    """Quadratic solution of the constant Hamiltonian equation.

    V(x) = (1/2)(<Px, x> + 2 <p, x> + p0) satisfies
    H(x, V_x, V_xx) = c0 for all x.  The additive constant p0 is free and
    fixed to 0 by default; shifting it changes neither c0 nor the gains.
    ``stabilizing`` records whether the induced feedback is mean-square
    stabilizing (true for the solution built from the stabilizing Riccati
    solution, generally false for other enumerated branches).
    """

    P: np.ndarray
    p: np.ndarray
    c0: float
    Theta_bar: np.ndarray
    theta_bar: np.ndarray
    stabilizing: bool
    closed_loop_cond: float
    p0: float = 0.0

    def __post_init__(self):
        for name in ("P", "p", "Theta_bar", "theta_bar"):
            getattr(self, name).setflags(write=False)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * (x @ self.P @ x + 2.0 * (self.p @ x) + self.p0)

    def gradient(self, x) -> np.ndarray:
        return self.P @ np.asarray(x, dtype=float) + self.p


def solve_cell(model: LQModel, are: AreSolution) -> CellSolution:
    """Assemble the cell solution from a stabilizing Riccati solution.

    p solves (A + B Theta)^T p = -(Pb + (C + D Theta)^T P sigma + q + Theta^T r)
    and c0 = (1/2)(2 <p, b> + <P sigma, sigma> - v' (R + D'PD)^-1 v) with
    v = B'p + D'P sigma + r.
    """
    P, Theta = are.P, are.Theta_bar
    Acl = model.A + model.B @ Theta
    cond = float(np.linalg.cond(Acl))
    if not np.isfinite(cond) or cond > 1e12:
        raise CellError(
            f"A + B Theta numerically singular (condition number {cond:.3e})"
        )
    Ccl = model.C + model.D @ Theta
    rhs = P @ model.b + Ccl.T @ (P @ model.sigma) + model.q + Theta.T @ model.r
    p = -np.linalg.solve(Acl.T, rhs)

    G = model.R + model.D.T @ P @ model.D
    v = model.B.T @ p + model.D.T @ (P @ model.sigma) + model.r
    c0 = 0.5 * (
        2.0 * (p @ model.b)
        + model.sigma @ P @ model.sigma
        - v @ np.linalg.solve(G, v)
    )
    theta = -np.linalg.solve(G, v)

    linear_res = float(np.linalg.norm(Acl.T @ p + rhs))
    if linear_res > 1e-10 * (1.0 + float(np.linalg.norm(rhs))):
        raise CellError(f"linear coefficient residual {linear_res:.3e}")
    stabilizing = is_stabilizer(model, Theta).stable
    return CellSolution(
        P=P.copy(),
        p=p,
        c0=float(c0),
        Theta_bar=Theta.copy(),
        theta_bar=theta,
        stabilizing=stabilizing,
        closed_loop_cond=cond,
    )


def cell_residual(model: LQModel, cell: CellSolution, xs) -> float:
    """Max over the probe states of |H(x, Px + p, P) - c0|."""
    worst = 0.0
    for x in np.atleast_2d(np.asarray(xs, dtype=float)):
        h = hamiltonian(model, x, cell.gradient(x), cell.P)
        worst = max(worst, abs(h.value - cell.c0))
    return worst


def enumerate_cell_solutions_special(
    A_sym: np.ndarray, Q: np.ndarray, b, sigma, q, r
) -> list[CellSolution]:
    """All sign-pattern solutions for the square structure B = R = I, C = D = S = 0.

    For symmetric A the quadratic equation forces (P - A)^2 = A^2 + Q, so
    with A^2 + Q = U diag(lam) U' every sign pattern eps gives
    Delta = U diag(eps_i sqrt(lam_i)) U', P = A + Delta and
    p = Delta^-1 (Pb - Pr + q).  All 2^n branches solve the constant
    Hamiltonian equation; exactly one has P - A positive definite and that
    one is the stabilizing solution.
    """
    A = np.atleast_2d(np.asarray(A_sym, dtype=float))
    n = A.shape[0]
    if n > 12:
        raise CellError("sign-pattern enumeration limited to n <= 12")
    if np.max(np.abs(A - A.T)) > 1e-12:
        raise ModelError("A must be symmetric for the special structure", field="A")
    eye = np.eye(n)
    model = LQModel(
        A=A, B=eye, C=np.zeros((n, n)), D=np.zeros((n, n)),
        b=b, sigma=sigma, Q=Q, S=np.zeros((n, n)), R=eye, q=q, r=r,
    )
    M = A @ A + model.Q
    lam, U = np.linalg.eigh(0.5 * (M + M.T))
    if lam[0] <= 0:
        raise CellError("A^2 + Q is not positive definite")
    roots = np.sqrt(lam)

    out = []
    for eps in itertools.product((1.0, -1.0), repeat=n):
        Delta = (U * (np.array(eps) * roots)) @ U.T
        Delta = 0.5 * (Delta + Delta.T)
        P = A + Delta
        p = np.linalg.solve(Delta, P @ model.b - P @ model.r + model.q)
        v = p + model.r
        c0 = 0.5 * (
            2.0 * (p @ model.b) + model.sigma @ P @ model.sigma - v @ v
        )
        Theta = -P
        theta = -v
        out.append(
            CellSolution(
                P=P,
                p=p,
                c0=float(c0),
                Theta_bar=Theta,
                theta_bar=theta,
                stabilizing=is_stabilizer(model, Theta).stable,
                closed_loop_cond=float(np.linalg.cond(A + Theta)),
            )
        )
    return out


def dump_cell_solution(cell: CellSolution) -> str:
    doc = {
        "P": cell.P.tolist(),
        "p": cell.p.tolist(),
        "p0": cell.p0,
        "c0": cell.c0,
        "Theta_bar": cell.Theta_bar.tolist(),
        "theta_bar": cell.theta_bar.tolist(),
        "stabilizing": cell.stabilizing,
        "closed_loop_cond": cell.closed_loop_cond,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_cell_solution(text: str) -> CellSolution:
    doc = json.loads(text)
    return CellSolution(
        P=np.asarray(doc["P"], dtype=float),
        p=np.asarray(doc["p"], dtype=float),
        c0=float(doc["c0"]),
        Theta_bar=np.asarray(doc["Theta_bar"], dtype=float),
        theta_bar=np.asarray(doc["theta_bar"], dtype=float),
        stabilizing=bool(doc["stabilizing"]),
        closed_loop_cond=float(doc["closed_loop_cond"]),
        p0=float(doc.get("p0", 0.0)),
    )
