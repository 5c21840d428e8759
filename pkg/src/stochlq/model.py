"""Problem data for stochastic linear-quadratic control with multiplicative noise.

The controlled dynamics are

    dX = (A X + B u + b) dt + (C X + D u + sigma) dW,

with a single scalar Brownian motion W, and the running cost is

    f(x, u) = (1/2) (<Q x, x> + 2 <S x, u> + <R u, u> + 2 <q, x> + 2 <r, u>).

Standing positivity hypothesis: Q > 0, R > 0 and Q - S^T R^-1 S > 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LQModel",
    "ModelError",
    "ValidationReport",
    "validate_model",
    "load_model",
    "dump_model",
    "read_model",
    "write_model",
]

#: Absolute tolerance used to accept Q and R as symmetric before symmetrizing.
SYMMETRY_TOL = 1e-12

_MATRIX_KEYS = ("A", "B", "C", "D", "Q", "S", "R")
_VECTOR_KEYS = ("b", "sigma", "q", "r")
_ALL_KEYS = ("n", "m") + _MATRIX_KEYS + _VECTOR_KEYS


class ModelError(ValueError):
    """Malformed model data. ``field`` names the offending entry when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _as_matrix(value, key: str, shape: tuple[int, int]) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise ModelError(
            f"{key} must have shape {shape}, got {arr.shape}", field=key
        )
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{key} contains non-finite entries", field=key)
    return arr


def _as_vector(value, key: str, length: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (length,):
        raise ModelError(
            f"{key} must be a vector of length {length}, got shape {arr.shape}",
            field=key,
        )
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{key} contains non-finite entries", field=key)
    return arr


def _symmetrize_checked(mat: np.ndarray, key: str) -> np.ndarray:
    skew = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
    if skew > SYMMETRY_TOL:
        raise ModelError(
            f"{key} not symmetric (max asymmetry {skew:.3e} exceeds "
            f"tolerance {SYMMETRY_TOL:.0e})",
            field=key,
        )
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True, eq=False)
class LQModel:
    """Immutable container for the coefficient matrices of one problem instance.

    Dimensions: states ``n``, controls ``m``.  ``A, C`` are n x n, ``B, D``
    are n x m, ``Q`` is n x n symmetric, ``S`` is m x n, ``R`` is m x m
    symmetric, and ``b, sigma, q`` (length n) and ``r`` (length m) are the
    affine offsets.  Q and R are symmetrized on construction after an exact
    symmetry check at absolute tolerance 1e-12.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError(f"A must be square, got {A.shape}", field="A")
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape[0] != n:
            raise ModelError(
                f"B must have {n} rows to match A, got {B.shape}", field="B"
            )
        m = B.shape[1]
        if n < 1 or m < 1:
            raise ModelError("dimensions n and m must be positive")

        values = {
            "A": _as_matrix(A, "A", (n, n)),
            "B": _as_matrix(B, "B", (n, m)),
            "C": _as_matrix(self.C, "C", (n, n)),
            "D": _as_matrix(self.D, "D", (n, m)),
            "b": _as_vector(self.b, "b", n),
            "sigma": _as_vector(self.sigma, "sigma", n),
            "Q": _symmetrize_checked(_as_matrix(self.Q, "Q", (n, n)), "Q"),
            "S": _as_matrix(self.S, "S", (m, n)),
            "R": _symmetrize_checked(_as_matrix(self.R, "R", (m, m)), "R"),
            "q": _as_vector(self.q, "q", n),
            "r": _as_vector(self.r, "r", m),
        }
        for key, arr in values.items():
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LQModel):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in _MATRIX_KEYS + _VECTOR_KEYS
        )

    def __repr__(self) -> str:
        return f"LQModel(n={self.n}, m={self.m})"

    def running_cost(self, x: np.ndarray, u: np.ndarray) -> float:
        """Evaluate the running cost f(x, u)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return 0.5 * (
            x @ self.Q @ x
            + 2.0 * (u @ self.S @ x)
            + u @ self.R @ u
            + 2.0 * (self.q @ x)
            + 2.0 * (self.r @ u)
        )


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the positivity check on (Q, R, Q - S^T R^-1 S)."""

    h1_ok: bool
    dimension_ok: bool
    min_eig_q: float
    min_eig_r: float
    min_eig_schur: float
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "h1_ok": self.h1_ok,
            "dimension_ok": self.dimension_ok,
            "min_eig_q": self.min_eig_q,
            "min_eig_r": self.min_eig_r,
            "min_eig_schur": self.min_eig_schur,
            "messages": list(self.messages),
        }


def validate_model(model: LQModel, tol: float = 1e-12) -> ValidationReport:
    """Check the positivity hypothesis on a model.

    Returns the exact smallest eigenvalues of Q, R and the Schur-type
    combination Q - S^T R^-1 S.  ``h1_ok`` is true iff all three exceed
    ``tol``.  Deterministic and side-effect free.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    min_q = float(np.linalg.eigvalsh(model.Q)[0])
    min_r = float(np.linalg.eigvalsh(model.R)[0])
    messages = []
    if min_r > 0:
        schur = model.Q - model.S.T @ np.linalg.solve(model.R, model.S)
        schur = 0.5 * (schur + schur.T)
        min_schur = float(np.linalg.eigvalsh(schur)[0])
    else:
        min_schur = float("-inf")
        messages.append("R is not positive definite; Schur complement undefined")
    h1_ok = min_q > tol and min_r > tol and min_schur > tol
    if not h1_ok:
        messages.append(
            "positivity hypothesis fails: min eig "
            f"Q={min_q:.3e}, R={min_r:.3e}, Q-S'R^-1S={min_schur:.3e}"
        )
    return ValidationReport(
        h1_ok=h1_ok,
        dimension_ok=True,
        min_eig_q=min_q,
        min_eig_r=min_r,
        min_eig_schur=min_schur,
        messages=messages,
    )


def load_model(text: str) -> LQModel:
    """Parse a JSON model document.

    The document is a single JSON object with exactly the keys
    n, m, A, B, C, D, b, sigma, Q, S, R, q, r.  Matrices are row-major
    nested arrays of numbers, vectors are flat arrays.  Unknown keys are
    rejected.  ``load_model(dump_model(model)) == model`` holds bit-exactly
    for finite values.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    unknown = sorted(set(doc) - set(_ALL_KEYS))
    if unknown:
        raise ModelError(f"unknown keys: {', '.join(unknown)}", field=unknown[0])
    missing = [k for k in _ALL_KEYS if k not in doc]
    if missing:
        raise ModelError(f"missing keys: {', '.join(missing)}", field=missing[0])
    n, m = doc["n"], doc["m"]
    if not (isinstance(n, int) and isinstance(m, int) and n >= 1 and m >= 1):
        raise ModelError("n and m must be positive integers", field="n")
    model = LQModel(
        A=_as_matrix(doc["A"], "A", (n, n)),
        B=_as_matrix(doc["B"], "B", (n, m)),
        C=_as_matrix(doc["C"], "C", (n, n)),
        D=_as_matrix(doc["D"], "D", (n, m)),
        b=_as_vector(doc["b"], "b", n),
        sigma=_as_vector(doc["sigma"], "sigma", n),
        Q=_as_matrix(doc["Q"], "Q", (n, n)),
        S=_as_matrix(doc["S"], "S", (m, n)),
        R=_as_matrix(doc["R"], "R", (m, m)),
        q=_as_vector(doc["q"], "q", n),
        r=_as_vector(doc["r"], "r", m),
    )
    return model


def dump_model(model: LQModel) -> str:
    """Serialize a model to the JSON document format accepted by load_model."""
    doc = {"n": model.n, "m": model.m}
    for key in _MATRIX_KEYS:
        doc[key] = getattr(model, key).tolist()
    for key in _VECTOR_KEYS:
        doc[key] = getattr(model, key).tolist()
    # Reorder to the documented key order for stable output.
    ordered = {k: doc[k] for k in _ALL_KEYS}
    return json.dumps(ordered, indent=2) + "\n"


def read_model(path) -> LQModel:
    """Load a model from a file path."""
    with open(path, "r", encoding="utf-8") as fh:
        return load_model(fh.read())


def write_model(model: LQModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_model(model))
