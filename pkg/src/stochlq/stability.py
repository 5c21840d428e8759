"""Mean-square stability machinery for linear SDEs with multiplicative noise.

For a closed loop dX = Ahat X dt + Chat X dW the evolution of the second
moment is governed by the linear operator

    P  |->  Ahat^T P + P Ahat + Chat^T P Chat

acting on symmetric matrices.  Exponential decay of E|X(t)|^2 is equivalent
to this operator having spectral abscissa < 0, and also to the associated
Lyapunov equation with any positive definite right-hand side admitting a
positive definite solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LQModel, ModelError

__all__ = [
    "ClosedLoopPair",
    "StabilityCert",
    "StabilityError",
    "lyap_operator_matrix",
    "solve_generalized_lyapunov",
    "is_l2_exp_stable",
    "is_stabilizer",
    "find_stabilizer",
    "closed_loop",
]

#: Spectral abscissa must fall below this (strictly) to certify stability.
STABILITY_THRESHOLD = -1e-9


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClosedLoopPair:
    """Drift/diffusion pair (Ahat, Chat) of a homogeneous closed loop."""

    Ahat: np.ndarray
    Chat: np.ndarray

    def __post_init__(self):
        Ahat = np.atleast_2d(np.asarray(self.Ahat, dtype=float))
        Chat = np.atleast_2d(np.asarray(self.Chat, dtype=float))
        n = Ahat.shape[0]
        if Ahat.shape != (n, n) or Chat.shape != (n, n):
            raise ModelError(
                f"closed-loop matrices must both be {n} x {n}, got "
                f"{Ahat.shape} and {Chat.shape}"
            )
        Ahat.setflags(write=False)
        Chat.setflags(write=False)
        object.__setattr__(self, "Ahat", Ahat)
        object.__setattr__(self, "Chat", Chat)

    @property
    def n(self) -> int:
        return self.Ahat.shape[0]


@dataclass(frozen=True)
class StabilityCert:
    """Stability verdict with the evidence backing it.

    ``spectral_abscissa`` is the largest real part over the spectrum of the
    n^2 x n^2 second-moment operator matrix.  When stable, ``lyapunov_P``
    solves the Lyapunov equation with identity right-hand side and
    ``min_eig_P`` is its smallest eigenvalue (positive).
    """

    stable: bool
    spectral_abscissa: float
    lyapunov_P: np.ndarray | None = None
    min_eig_P: float | None = None

    def to_dict(self) -> dict:
        return {
            "stable": self.stable,
            "spectral_abscissa": self.spectral_abscissa,
            "lyapunov_P": None
            if self.lyapunov_P is None
            else self.lyapunov_P.tolist(),
            "min_eig_P": self.min_eig_P,
        }


def closed_loop(model: LQModel, Theta: np.ndarray) -> ClosedLoopPair:
    """Form (A + B Theta, C + D Theta) for an m x n feedback gain."""
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    if Theta.shape != (model.m, model.n):
        raise ModelError(
            f"Theta must have shape ({model.m}, {model.n}), got {Theta.shape}",
            field="Theta",
        )
    return ClosedLoopPair(model.A + model.B @ Theta, model.C + model.D @ Theta)


def lyap_operator_matrix(pair: ClosedLoopPair) -> np.ndarray:
    """Matrix of P |-> Ahat^T P + P Ahat + Chat^T P Chat under column stacking.

    With vec the column-stacking vectorization, the returned M satisfies
    M vec(P) = vec(Ahat^T P + P Ahat + Chat^T P Chat) for every symmetric P:

        M = I (x) Ahat^T + Ahat^T (x) I + Chat^T (x) Chat^T.
    """
    n = pair.n
    eye = np.eye(n)
    At = pair.Ahat.T
    Ct = pair.Chat.T
    return np.kron(eye, At) + np.kron(At, eye) + np.kron(Ct, Ct)


def _vec(mat: np.ndarray) -> np.ndarray:
    return mat.reshape(-1, order="F")


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    return v.reshape((n, n), order="F")


def solve_generalized_lyapunov(
    pair: ClosedLoopPair, Lambda: np.ndarray
) -> np.ndarray:
    """Solve Ahat^T P + P Ahat + Chat^T P Chat + Lambda = 0 for symmetric P.

    Dense n^2 x n^2 solve by vectorization; the O(n^6) cost is accepted at
    the intended scale n <= 10.  Raises StabilityError when the operator is
    singular, reporting its smallest singular value.  The result is
    symmetrized and the residual is checked against
    1e-10 * (1 + ||Lambda||_F).
    """
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    n = pair.n
    if Lambda.shape != (n, n):
        raise ModelError(f"Lambda must be {n} x {n}, got {Lambda.shape}")
    M = lyap_operator_matrix(pair)
    svals = np.linalg.svd(M, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise StabilityError(
            f"Lyapunov operator singular (smallest singular value {svals[-1]:.3e})"
        )
    P = _unvec(np.linalg.solve(M, _vec(-Lambda)), n)
    P = 0.5 * (P + P.T)
    residual = pair.Ahat.T @ P + P @ pair.Ahat + pair.Chat.T @ P @ pair.Chat + Lambda
    lam_norm = np.linalg.norm(Lambda, "fro")
    res_norm = float(np.linalg.norm(residual, "fro"))
    if res_norm > 1e-10 * (1.0 + lam_norm):
        raise StabilityError(
            f"Lyapunov solve residual {res_norm:.3e} exceeds tolerance"
        )
    return P


def is_l2_exp_stable(pair: ClosedLoopPair) -> StabilityCert:
    """Decide mean-square exponential stability of a closed-loop pair.

    Stability holds iff the second-moment operator has spectral abscissa
    below ``STABILITY_THRESHOLD``.  For stable pairs the certificate also
    carries the positive definite Lyapunov solution for identity right-hand
    side, exercising the operator-spectrum and Lyapunov characterizations
    against each other.
    """
    M = lyap_operator_matrix(pair)
    abscissa = float(np.max(np.real(np.linalg.eigvals(M))))
    if abscissa >= STABILITY_THRESHOLD:
        return StabilityCert(stable=False, spectral_abscissa=abscissa)
    P = solve_generalized_lyapunov(pair, np.eye(pair.n))
    min_eig = float(np.linalg.eigvalsh(P)[0])
    return StabilityCert(
        stable=min_eig > 0.0,
        spectral_abscissa=abscissa,
        lyapunov_P=P,
        min_eig_P=min_eig,
    )


def is_stabilizer(model: LQModel, Theta: np.ndarray) -> StabilityCert:
    """Certify whether the gain Theta stabilizes (A + B Theta, C + D Theta)."""
    return is_l2_exp_stable(closed_loop(model, Theta))


def find_stabilizer(
    model: LQModel,
    theta0: np.ndarray | None = None,
    max_steps: int = 200,
    step_size: float = 0.4,
) -> np.ndarray:
    """Search for a mean-square stabilizing feedback gain.

    Strategy: (1) test a user-supplied candidate, (2) run damped fixed-point
    steps P <- P + alpha * riccati_residual(P) from P = I and test the
    regulator-style candidate Theta(P) = -(R + D'PD)^-1 (B'P + D'PC + S) at
    every step, (3) give up after ``max_steps``.  Every returned gain is
    certified; failure raises StabilityError, which signals that the
    stabilizability hypothesis may not hold for this model.
    """
    if theta0 is not None:
        cert = is_stabilizer(model, theta0)
        if cert.stable:
            return np.atleast_2d(np.asarray(theta0, dtype=float))

    A, B, C, D = model.A, model.B, model.C, model.D
    Q, S, R = model.Q, model.S, model.R
    P = np.eye(model.n)
    for _ in range(max_steps):
        G = R + D.T @ P @ D
        try:
            Theta = -np.linalg.solve(G, B.T @ P + D.T @ P @ C + S)
        except np.linalg.LinAlgError:
            break
        if is_stabilizer(model, Theta).stable:
            return Theta
        gain = P @ B + C.T @ P @ D + S.T
        residual = A.T @ P + P @ A + C.T @ P @ C + Q - gain @ np.linalg.solve(G, gain.T)
        residual = 0.5 * (residual + residual.T)
        alpha = step_size / (1.0 + np.linalg.norm(residual, "fro"))
        P = P + alpha * residual
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)):
            break
    raise StabilityError("no stabilizer found")
