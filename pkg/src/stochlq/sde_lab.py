"""Seeded Euler-Maruyama Monte Carlo for coupled closed-loop systems.

The central object is an ensemble in which every path drives several
closed loops with the *same* Brownian increments: the finite-horizon
optimal loop (time-varying gains), the constant-gain loop from the cell
problem, and optionally the stationary comparison process started at the
static optimum.  Shared noise makes pathwise differences attributable to
the gains alone.

Everything is a pure function of (model, solutions, config): increments
come from the counter-based generator in :mod:`stochlq.rng`, paths are
independent given their index, and aggregation happens in fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend, rng
from .cell import CellSolution
from .model import LQModel, ModelError
from .riccati import FiniteHorizonSolution

__all__ = [
    "SimConfig",
    "SimulationError",
    "TrajectoryBundle",
    "EmpiricalMeasure",
    "CostEstimate",
    "MomentCurve",
    "simulate_affine_closed_loop",
    "simulate_coupled_ensemble",
    "simulate_cell_ensemble",
    "cost_along",
    "moment_curve",
    "deviation_curve",
    "snapshot_measure",
    "wasserstein2_estimate",
    "stationarity_residual",
    "bundle_to_csv",
]

PROCESSES = ("finite", "cell", "star")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run description.

    ``x0`` seeds the finite-horizon loop, ``xbar0`` the constant-gain loop;
    distinct starts expose the two-sided transient, equal starts the
    one-sided one.  ``dt`` must divide ``T`` (relative tolerance 1e-12).
    """

    T: float
    dt: float
    n_paths: int
    seed: int
    x0: np.ndarray
    xbar0: np.ndarray

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        for name in ("x0", "xbar0"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    def with_horizon(self, T: float) -> "SimConfig":
        return replace(self, T=float(T))


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Finite sample of R^k points standing in for a distribution."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.shape[0] == 0:
            raise ValueError("empirical measure needs at least one sample")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.stderr
        return (self.mean - half, self.mean + half)


@dataclass(frozen=True)
class MomentCurve:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray


@dataclass(frozen=True)
class TrajectoryBundle:
    """Coupled ensemble snapshots on a shared record grid.

    ``states[name]`` has shape (n_paths, n_rec, n) and ``controls[name]``
    (n_paths, n_rec, m) for each simulated process name in ``names``;
    ``costs[name]`` holds per-path cumulative running-cost integrals
    (trapezoid at full step resolution, snapshotted at record times).
    Within one path all processes consumed identical increments.
    """

    times: np.ndarray
    names: tuple[str, ...]
    states: dict
    controls: dict
    costs: dict
    cfg: SimConfig
    record_steps: np.ndarray

    def __post_init__(self):
        self.times.setflags(write=False)
        self.record_steps.setflags(write=False)
        for by_name in (self.states, self.controls, self.costs):
            for arr in by_name.values():
                arr.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.states[self.names[0]].shape[0]

    def record_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, self.cfg.T):
            raise ValueError(f"time {t} is not on the record grid")
        return idx


def _coeff(value, t, shape):
    out = value(t) if callable(value) else value
    return np.asarray(out, dtype=float).reshape(shape)


def simulate_affine_closed_loop(
    Ahat, Chat, bhat, sighat, x0, noise: rng.NoisePath, grid
) -> np.ndarray:
    """Single-path Euler-Maruyama for dX = (Ahat X + bhat) dt + (Chat X + sighat) dW.

    Coefficients may be constant arrays or callables of time, evaluated at
    the left node of each step.  Deterministic given the noise path; serves
    as the reference implementation the ensemble kernels are checked
    against.
    """
    grid = np.asarray(grid, dtype=float)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n = x.shape[0]
    steps = len(grid) - 1
    if noise.n_steps < steps:
        raise ValueError("noise path shorter than grid")
    dW = noise.increments()
    out = np.empty((steps + 1, n))
    out[0] = x
    for i in range(steps):
        t = grid[i]
        dt = grid[i + 1] - grid[i]
        A = _coeff(Ahat, t, (n, n))
        C = _coeff(Chat, t, (n, n))
        b = _coeff(bhat, t, (n,))
        s = _coeff(sighat, t, (n,))
        x = x + (A @ x + b) * dt + (C @ x + s) * dW[i]
        if not np.all(np.abs(x) <= 1e100):
            raise SimulationError(f"trajectory diverged at step {i + 1}")
        out[i + 1] = x
    return out


def _record_plan(n_steps: int, record_points: int):
    stride = max(1, n_steps // max(1, record_points - 1))
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    steps = np.asarray(steps, dtype=np.int64)
    slots = np.full(n_steps + 1, -1, dtype=np.int64)
    slots[steps] = np.arange(len(steps), dtype=np.int64)
    return steps, slots


def _gain_tracks(model, cfg, sources):
    """Dense per-step gain arrays for each simulated system."""
    n, m = model.n, model.m
    n_steps = cfg.n_steps
    times = np.arange(n_steps + 1) * cfg.dt
    K = len(sources)
    Theta_all = np.empty((K, n_steps + 1, m, n))
    theta_all = np.empty((K, n_steps + 1, m))
    for k, src in enumerate(sources):
        if isinstance(src, FiniteHorizonSolution):
            if abs(src.T - cfg.T) > 1e-9 * max(1.0, cfg.T):
                raise ValueError("finite-horizon solution and config disagree on T")
            if len(src.grid) == n_steps + 1:
                Theta_all[k] = src.Theta_grid
                theta_all[k] = src.theta_grid
            else:
                for a in range(m):
                    for j in range(n):
                        Theta_all[k, :, a, j] = np.interp(
                            times, src.grid, src.Theta_grid[:, a, j]
                        )
                    theta_all[k, :, a] = np.interp(times, src.grid, src.theta_grid[:, a])
        else:
            Theta, theta = src
            Theta_all[k] = np.asarray(Theta, dtype=float)
            theta_all[k] = np.asarray(theta, dtype=float)
    return Theta_all, theta_all


def _run_systems(model, cfg, sources, x0_list, names, record_points):
    n, m = model.n, model.m
    for x0 in x0_list:
        if np.atleast_1d(np.asarray(x0)).shape != (n,):
            raise ModelError(f"initial state must have length {n}")
    n_steps = cfg.n_steps
    rec_steps, rec_slots = _record_plan(n_steps, record_points)
    n_rec = len(rec_steps)
    K = len(sources)

    Theta_all, theta_all = _gain_tracks(model, cfg, sources)
    x0_all = np.ascontiguousarray(
        np.stack([np.atleast_1d(np.asarray(x, dtype=float)) for x in x0_list])
    )
    X_out = np.empty((K, cfg.n_paths, n_rec, n))
    U_out = np.empty((K, cfg.n_paths, n_rec, m))
    cost_out = np.empty((K, cfg.n_paths, n_rec))
    status = np.zeros((K, cfg.n_paths), dtype=np.int64)

    kern = backend.get_kernels()
    kern.simulate_ensemble(
        np.ascontiguousarray(model.A),
        np.ascontiguousarray(model.B),
        np.ascontiguousarray(model.C),
        np.ascontiguousarray(model.D),
        np.ascontiguousarray(model.b),
        np.ascontiguousarray(model.sigma),
        np.ascontiguousarray(model.Q),
        np.ascontiguousarray(model.S),
        np.ascontiguousarray(model.R),
        np.ascontiguousarray(model.q),
        np.ascontiguousarray(model.r),
        np.ascontiguousarray(Theta_all),
        np.ascontiguousarray(theta_all),
        x0_all,
        int(cfg.seed),
        int(cfg.n_paths),
        float(cfg.dt),
        rec_slots,
        X_out,
        U_out,
        cost_out,
        status,
    )
    if np.any(status):
        k, p = np.argwhere(status)[0]
        raise SimulationError(
            f"trajectory diverged at step {status[k, p]} "
            f"(process {names[k]!r}, path {p})"
        )
    return TrajectoryBundle(
        times=rec_steps * cfg.dt,
        names=tuple(names),
        states={name: X_out[k] for k, name in enumerate(names)},
        controls={name: U_out[k] for k, name in enumerate(names)},
        costs={name: cost_out[k] for k, name in enumerate(names)},
        cfg=cfg,
        record_steps=rec_steps,
    )


def simulate_coupled_ensemble(
    model: LQModel,
    fh: FiniteHorizonSolution,
    cell: CellSolution,
    cfg: SimConfig,
    include_star: bool = False,
    star_start: np.ndarray | None = None,
    record_points: int = 401,
) -> TrajectoryBundle:
    """Drive the finite-horizon and constant-gain loops on shared noise.

    Process 'finite' starts at cfg.x0 with the time-varying gains (linear
    interpolation onto the simulation grid when the step sizes differ);
    process 'cell' starts at cfg.xbar0 with the constant gains.  With
    ``include_star`` a third copy of the constant-gain loop starts at
    ``star_start`` (the static optimum), sharing the same increments.
    """
    m, n = model.m, model.n
    const = (
        np.broadcast_to(cell.Theta_bar, (cfg.n_steps + 1, m, n)),
        np.broadcast_to(cell.theta_bar, (cfg.n_steps + 1, m)),
    )
    sources = [fh, const]
    x0_list = [cfg.x0, cfg.xbar0]
    names = ["finite", "cell"]
    if include_star:
        if star_start is None:
            raise ValueError("include_star requires star_start")
        sources.append(const)
        x0_list.append(np.asarray(star_start, dtype=float))
        names.append("star")
    return _run_systems(model, cfg, sources, x0_list, names, record_points)


def simulate_cell_ensemble(
    model: LQModel,
    cell: CellSolution,
    cfg: SimConfig,
    record_points: int = 401,
) -> TrajectoryBundle:
    """Constant-gain loop alone, started at cfg.x0."""
    m, n = model.m, model.n
    const = (
        np.broadcast_to(cell.Theta_bar, (cfg.n_steps + 1, m, n)),
        np.broadcast_to(cell.theta_bar, (cfg.n_steps + 1, m)),
    )
    return _run_systems(model, cfg, [const], [cfg.x0], ["cell"], record_points)


def cost_along(
    model: LQModel, bundle: TrajectoryBundle, which: str, upto: float
) -> CostEstimate:
    """Monte Carlo running-cost integral along one control branch.

    Returns the ensemble mean of the per-path trapezoid quadrature of
    f(X(t), u(t)) over [0, upto] with its standard error; ``upto`` must be
    a record time.
    """
    idx = bundle.record_index(upto)
    vals = bundle.costs[which][:, idx]
    mean = float(np.mean(vals))
    if len(vals) > 1:
        stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    else:
        stderr = float("inf")
    return CostEstimate(mean=mean, stderr=stderr)


def moment_curve(
    bundle: TrajectoryBundle, which: str = "cell", order: int = 2
) -> MomentCurve:
    """Per-time Monte Carlo estimate of E |X(t)|^order with standard errors."""
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    X = bundle.states[which]
    norms_sq = np.sum(X * X, axis=2)
    vals = norms_sq if order == 2 else norms_sq**2
    mean = np.mean(vals, axis=0)
    stderr = np.std(vals, axis=0, ddof=1) / math.sqrt(vals.shape[0])
    return MomentCurve(times=bundle.times.copy(), values=mean, stderr=stderr)


def deviation_curve(bundle: TrajectoryBundle):
    """(times, d, stderr) for d(t) = E[|X_fin - X_cell|^2 + |u_fin - u_cell|^2]."""
    dx = bundle.states["finite"] - bundle.states["cell"]
    du = bundle.controls["finite"] - bundle.controls["cell"]
    per_path = np.sum(dx * dx, axis=2) + np.sum(du * du, axis=2)
    d = np.mean(per_path, axis=0)
    se = np.std(per_path, axis=0, ddof=1) / math.sqrt(per_path.shape[0])
    return bundle.times.copy(), d, se


def snapshot_measure(
    bundle: TrajectoryBundle, t: float, which: str = "cell", with_control: bool = True
) -> EmpiricalMeasure:
    """(X(t), u(t)) samples across paths at a fixed record time."""
    idx = bundle.record_index(t)
    X = bundle.states[which][:, idx, :]
    if with_control:
        return EmpiricalMeasure(np.hstack([X, bundle.controls[which][:, idx, :]]))
    return EmpiricalMeasure(X.copy())


def _subsample(samples: np.ndarray, count: int, seed: int) -> np.ndarray:
    if samples.shape[0] <= count:
        return samples
    keys = rng.normals(seed, np.arange(samples.shape[0]), [0])[:, 0]
    order = np.argsort(keys, kind="stable")
    return samples[np.sort(order[:count])]


def wasserstein2_estimate(
    a: EmpiricalMeasure,
    b: EmpiricalMeasure,
    n_slices: int = 64,
    seed: int = 0,
) -> float:
    """Sliced 2-Wasserstein distance between two empirical measures.

    One-dimensional samples use the exact sorted-sample distance; higher
    dimensions average the exact one-dimensional transport cost over
    ``n_slices`` random unit directions (root mean square), deterministic
    given ``seed``.  Unequal sample counts are handled by deterministic
    subsampling of the larger set.
    """
    if a.dim != b.dim:
        raise ValueError("measures must share the sample dimension")
    count = min(a.samples.shape[0], b.samples.shape[0])
    sa = _subsample(a.samples, count, seed)
    sb = _subsample(b.samples, count, seed + 1)
    if a.dim == 1:
        diff = np.sort(sa[:, 0]) - np.sort(sb[:, 0])
        return float(np.sqrt(np.mean(diff * diff)))
    dirs = rng.normals(seed, np.arange(n_slices), np.arange(a.dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    dirs = dirs / norms
    pa = np.sort(sa @ dirs.T, axis=0)
    pb = np.sort(sb @ dirs.T, axis=0)
    per_slice = np.mean((pa - pb) ** 2, axis=0)
    return float(np.sqrt(np.mean(per_slice)))


def stationarity_residual(
    model: LQModel, fh: FiniteHorizonSolution, bundle: TrajectoryBundle
):
    """Mean norm of the first-order coupling residual along the optimal loop.

    Reconstructs the adjoint pair Y = P(t)X + p(t), Z = P(t)(CX + Du + sigma)
    at every record time and evaluates E |B'Y + D'Z + SX + Ru + r|.  With
    consistent gains this residual is zero up to round-off; a detuned gain
    shows up immediately.
    """
    X_all = bundle.states["finite"]
    U_all = bundle.controls["finite"]
    out = np.empty(len(bundle.times))
    for i, t in enumerate(bundle.times):
        P, p, _ = fh.coefficients_at(float(t))
        X = X_all[:, i, :]
        U = U_all[:, i, :]
        Y = X @ P.T + p
        load = X @ model.C.T + U @ model.D.T + model.sigma
        Z = load @ P.T
        res = Y @ model.B + Z @ model.D + X @ model.S.T + U @ model.R + model.r
        out[i] = float(np.mean(np.linalg.norm(res, axis=1)))
    return bundle.times.copy(), out


def bundle_to_csv(
    bundle: TrajectoryBundle,
    path,
    w2_subsample: int = 2048,
    w2_slices: int = 64,
) -> None:
    """Per-record-time ensemble statistics.

    Columns: t, dev_state_msq, dev_ctrl_msq, xbar_msq, cost_finite_partial,
    cost_cell_partial, w2_to_final.  The deviation columns are the mean
    squared state/control gaps between the 'finite' and 'cell' processes;
    the partial costs are ensemble means of the running-cost integrals up
    to t; w2_to_final is the sliced distance between the (X, u) snapshot of
    the 'cell' process at t and at the final record time (subsampled paths).
    """
    has_pair = "finite" in bundle.names and "cell" in bundle.names
    which = "cell" if "cell" in bundle.names else bundle.names[0]
    times = bundle.times
    if has_pair:
        _, dev, _ = deviation_curve(bundle)
        dx = bundle.states["finite"] - bundle.states["cell"]
        du = bundle.controls["finite"] - bundle.controls["cell"]
        dev_state = np.mean(np.sum(dx * dx, axis=2), axis=0)
        dev_ctrl = np.mean(np.sum(du * du, axis=2), axis=0)
        cost_fin = np.mean(bundle.costs["finite"], axis=0)
    else:
        dev_state = np.full(len(times), np.nan)
        dev_ctrl = np.full(len(times), np.nan)
        cost_fin = np.full(len(times), np.nan)
    Xb = bundle.states[which]
    xbar_msq = np.mean(np.sum(Xb * Xb, axis=2), axis=0)
    cost_cell = np.mean(bundle.costs[which], axis=0)

    final = snapshot_measure(bundle, float(times[-1]), which=which)
    final_sub = EmpiricalMeasure(
        _subsample(final.samples, w2_subsample, bundle.cfg.seed)
    )
    w2 = np.empty(len(times))
    for i, t in enumerate(times):
        snap = snapshot_measure(bundle, float(t), which=which)
        snap_sub = EmpiricalMeasure(
            _subsample(snap.samples, w2_subsample, bundle.cfg.seed)
        )
        w2[i] = wasserstein2_estimate(
            snap_sub, final_sub, n_slices=w2_slices, seed=bundle.cfg.seed
        )

    header = (
        "t,dev_state_msq,dev_ctrl_msq,xbar_msq,"
        "cost_finite_partial,cost_cell_partial,w2_to_final"
    )
    with open(path, "w", encoding="utf-8") as fh_out:
        fh_out.write(header + "\n")
        for i, t in enumerate(times):
            row = [
                float(t),
                float(dev_state[i]),
                float(dev_ctrl[i]),
                float(xbar_msq[i]),
                float(cost_fin[i]),
                float(cost_cell[i]),
                float(w2[i]),
            ]
            fh_out.write(",".join(repr(v) for v in row) + "\n")
