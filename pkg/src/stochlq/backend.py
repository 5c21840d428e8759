"""Kernel backend selection.

Hot loops (Riccati integration, Euler-Maruyama ensembles) exist in two
implementations: numba-jitted loops and pure-numpy vectorized code.  Both
consume identical noise streams and perform identical floating-point
operations, so they produce bit-identical results.

Selection order: an explicit ``select_backend`` call, then the
``STOCHLQ_BACKEND`` environment variable (``numba`` or ``numpy``), then
``numba`` when importable, else ``numpy``.
"""

from __future__ import annotations

import os

__all__ = ["available_backends", "select_backend", "backend_name", "get_kernels"]

ENV_VAR = "STOCHLQ_BACKEND"

_forced: str | None = None
_modules: dict[str, object] = {}


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def available_backends() -> list[str]:
    names = ["numpy"]
    if _numba_importable():
        names.insert(0, "numba")
    return names


def select_backend(name: str | None) -> None:
    """Force a backend programmatically; ``None`` restores auto selection."""
    global _forced
    if name is not None:
        name = name.lower()
        if name not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {name!r} (use 'numba' or 'numpy')")
        if name == "numba" and not _numba_importable():
            raise RuntimeError("numba backend requested but numba is not importable")
    _forced = name


def backend_name() -> str:
    if _forced is not None:
        return _forced
    env = os.environ.get(ENV_VAR, "").strip().lower()
    if env in ("numba", "numpy"):
        if env == "numba" and not _numba_importable():
            raise RuntimeError(
                f"{ENV_VAR}=numba requested but numba is not importable"
            )
        return env
    if env not in ("", "auto"):
        raise RuntimeError(f"unrecognized {ENV_VAR}={env!r} (use numba|numpy|auto)")
    return "numba" if _numba_importable() else "numpy"


def get_kernels():
    """Return the kernel module for the active backend."""
    name = backend_name()
    mod = _modules.get(name)
    if mod is None:
        if name == "numba":
            from . import _kernels_numba as mod
        else:
            from . import _kernels_numpy as mod
        _modules[name] = mod
    return mod
