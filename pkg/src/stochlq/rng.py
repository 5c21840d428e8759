"""Counter-based noise generation for reproducible Monte Carlo.

Each Brownian increment is a pure function of the triple
(seed, path_index, step_index): three chained splitmix64 finalizer rounds
hash the counter into 64-bit words, and a Box-Muller transform turns two
words into one standard normal.  There is no sequential generator state,
so any subset of paths or steps can be produced in any order, on any
schedule, with identical results.

All generation happens here, in vectorized numpy; simulation kernels only
consume increment arrays.  This keeps the numba and numpy execution paths
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["normals", "scaled_increments", "NoisePath"]

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_GOLD2 = np.uint64((2 * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = np.uint64(11)
_INV53 = float(2.0 ** -53)
_TWO_PI = 2.0 * np.pi


def _finalize(z: np.ndarray) -> np.ndarray:
    # splitmix64 output function (Stafford mix)
    z = z ^ (z >> np.uint64(30))
    z = z * _MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _MIX2
    z = z ^ (z >> np.uint64(31))
    return z


def _seed_word(seed: int) -> np.uint64:
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


def path_keys(seed: int, paths: np.ndarray) -> np.ndarray:
    """First-round hash per path; reusable across steps."""
    paths = np.asarray(paths, dtype=np.uint64)
    return _finalize(_seed_word(seed) + _GOLD * (paths + np.uint64(1)))


def _raw_pair(pkey: np.ndarray, steps: np.ndarray):
    """Two 64-bit words per (path, step) cell; inputs broadcast together."""
    # at least 1-d so all uint64 arithmetic stays on arrays (silent wraparound)
    steps = np.atleast_1d(np.asarray(steps, dtype=np.uint64))
    z = _finalize(pkey + _GOLD * (steps + np.uint64(1)))
    w0 = _finalize(z + _GOLD)
    w1 = _finalize(z + _GOLD2)
    return w0, w1


def _box_muller(w0: np.ndarray, w1: np.ndarray) -> np.ndarray:
    # u1 in (0, 1] avoids log(0); u2 in [0, 1)
    u1 = ((w0 >> _U53) + np.uint64(1)).astype(np.float64) * _INV53
    u2 = (w1 >> _U53).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def normals(seed: int, paths, steps) -> np.ndarray:
    """Standard normal draws indexed by (path, step).

    ``paths`` and ``steps`` are integer arrays (or scalars); the result has
    shape ``(len(paths), len(steps))`` after 1-d promotion.  Identical
    (seed, path, step) triples always yield identical draws.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.uint64))
    steps = np.atleast_1d(np.asarray(steps, dtype=np.uint64))
    pkey = path_keys(seed, paths)[:, None]
    w0, w1 = _raw_pair(pkey, steps[None, :])
    return _box_muller(w0, w1)


def step_normals(pkey: np.ndarray, step: int) -> np.ndarray:
    """Draws for one step across precomputed path keys (shape of ``pkey``)."""
    w0, w1 = _raw_pair(pkey, np.uint64(step))
    return _box_muller(w0, w1)


def scaled_increments(seed: int, paths, steps, dt: float) -> np.ndarray:
    """Brownian increments Normal(0, dt) for the given path/step indices."""
    return normals(seed, paths, steps) * np.sqrt(dt)


@dataclass(frozen=True)
class NoisePath:
    """One path's Brownian increments, reproducible from (seed, path_index).

    ``increments()`` returns the length-``n_steps`` array of Normal(0, dt)
    increments, the same values any ensemble kernel consumes for this path.
    """

    seed: int
    path_index: int
    dt: float
    n_steps: int

    def increments(self) -> np.ndarray:
        out = scaled_increments(
            self.seed, [self.path_index], np.arange(self.n_steps), self.dt
        )
        return out[0]
