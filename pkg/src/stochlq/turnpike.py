"""Exponential-envelope fits and certification of long-horizon behavior.

Certifies three families of statements at desk scale:

* gain convergence: the finite-horizon coefficients approach their
  constant counterparts exponentially in the distance to the horizon;
* state/control transients: the coupled ensemble deviation decays
  exponentially away from both ends of [0, T];
* ergodic cost: the value per unit time approaches the constant c0, which
  analytically equals the static optimum value, and the constant-gain
  control is average-cost optimal up to an O(1) total gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cell import CellSolution
from .model import LQModel
from .riccati import FiniteHorizonSolution, solve_finite_horizon, value_finite
from .sde_lab import (
    SimConfig,
    TrajectoryBundle,
    cost_along,
    deviation_curve,
    simulate_cell_ensemble,
)
from .static_opt import static_from_cell

__all__ = [
    "DecayFit",
    "FitError",
    "CoefficientCertificate",
    "StateTurnpikeCertificate",
    "TurnpikeCertificate",
    "ErgodicReport",
    "fit_exponential",
    "certify_coefficient_convergence",
    "default_tau",
    "certify_state_turnpike",
    "certify_turnpike",
    "ergodic_report",
]

#: Deviations below this are treated as converged to machine precision.
MACHINE_FLOOR = 1e-13


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential envelope value ~ K exp(-lambda t).

    Ordinary least squares of log(value) against time; K is the intercept
    exponential, lambda the negated slope (positive lambda means decay),
    r_squared the coefficient of determination on the log scale.
    """

    K: float
    lam: float
    r_squared: float
    window: tuple[float, float]
    n_points: int

    @property
    def decaying(self) -> bool:
        return self.lam > 0.0

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "lambda": self.lam,
            "r_squared": self.r_squared,
            "window": list(self.window),
            "n_points": self.n_points,
        }


def fit_exponential(ts, values) -> DecayFit:
    """Fit K exp(-lambda t) to strictly positive samples by log-linear OLS."""
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if ts.shape != values.shape or ts.ndim != 1:
        raise FitError("ts and values must be 1-d arrays of equal length")
    if len(ts) < 8:
        raise FitError(f"need at least 8 points, got {len(ts)}")
    if np.any(values <= 0):
        raise FitError("nonpositive value in window")
    logs = np.log(values)
    t_mean = np.mean(ts)
    y_mean = np.mean(logs)
    ss_tt = np.sum((ts - t_mean) ** 2)
    if ss_tt == 0:
        raise FitError("degenerate time window")
    slope = float(np.sum((ts - t_mean) * (logs - y_mean)) / ss_tt)
    intercept = float(y_mean - slope * t_mean)
    resid = logs - (intercept + slope * ts)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((logs - y_mean) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 else 1.0 - ss_res / ss_tot
    return DecayFit(
        K=math.exp(intercept),
        lam=-slope,
        r_squared=r2,
        window=(float(ts[0]), float(ts[-1])),
        n_points=len(ts),
    )


@dataclass(frozen=True)
class CoefficientCertificate:
    """Envelope fits for the four coefficient deviations.

    ``fits`` maps P/p/Theta/theta to a DecayFit, or to None when the
    deviation sits at machine precision across the window (counted as a
    pass).  The fit abscissa is the distance to the horizon.
    """

    fits: dict
    window: tuple[float, float]
    r2_min: float
    passed: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "window": list(self.window),
            "r2_min": self.r2_min,
            "passed": self.passed,
            "notes": list(self.notes),
            "fits": {
                k: (None if f is None else f.to_dict()) for k, f in self.fits.items()
            },
        }


def _masked_fit(s, dev, floor: float) -> DecayFit | None:
    """Fit on positive values above the saturation floor; None if all at floor."""
    alive = dev > floor
    if not np.any(alive):
        return None
    # drop the round-off plateau so saturated tails do not bias the slope
    floor_eff = max(floor, 5.0 * float(np.min(dev[alive])))
    keep = dev > floor_eff
    if np.count_nonzero(keep) < 8:
        keep = alive
    if np.count_nonzero(keep) < 8:
        return None
    return fit_exponential(s[keep], dev[keep])


def certify_coefficient_convergence(
    fh: FiniteHorizonSolution,
    cell: CellSolution,
    window: tuple[float, float] | None = None,
    r2_min: float = 0.99,
) -> CoefficientCertificate:
    """Fit exponential envelopes to the coefficient deviations.

    Deviations |P(t) - P|, |p(t) - p|, |Theta(t) - Theta_bar| and
    |theta(t) - theta_bar| (Frobenius/Euclidean norms) are regressed
    against the horizon distance s = T - t over s in [2, T/2] by default,
    skipping the O(1) boundary layer at the horizon and the round-off
    saturation near t = 0.
    """
    T = fh.T
    if window is None:
        window = (2.0, T / 2.0)
    s = T - fh.grid
    devs = {
        "P": np.linalg.norm(fh.P_grid - cell.P, axis=(1, 2)),
        "p": np.linalg.norm(fh.p_grid - cell.p, axis=1),
        "Theta": np.linalg.norm(fh.Theta_grid - cell.Theta_bar, axis=(1, 2)),
        "theta": np.linalg.norm(fh.theta_grid - cell.theta_bar, axis=1),
    }
    in_win = (s >= window[0]) & (s <= window[1])
    if not np.any(in_win):
        raise FitError(f"window {window} contains no grid nodes")
    order = np.argsort(s[in_win])
    s_win = s[in_win][order]

    fits = {}
    notes = []
    ok = True
    for name, dev in devs.items():
        dev_win = dev[in_win][order]
        fit = _masked_fit(s_win, dev_win, MACHINE_FLOOR)
        fits[name] = fit
        if fit is None:
            notes.append(f"{name}: converged to machine precision")
        elif not (fit.lam > 0 and fit.r_squared >= r2_min):
            ok = False
            notes.append(
                f"{name}: lambda={fit.lam:.4g}, R^2={fit.r_squared:.4f} below bar"
            )
    return CoefficientCertificate(
        fits=fits, window=window, r2_min=r2_min, passed=ok, notes=notes
    )


def default_tau(
    coeff: CoefficientCertificate, model: LQModel, cell: CellSolution
) -> float:
    """Margin excluded at the horizon end before fitting state deviations.

    tau = max(1, (1/lambda) log(2K / beta2)) with (K, lambda) taken
    conservatively across the coefficient fits (largest K, smallest
    lambda) and beta2 the smallest eigenvalue of the closed-loop running
    cost Q + S'Theta + Theta'S + Theta'R Theta.
    """
    real_fits = [f for f in coeff.fits.values() if f is not None and f.lam > 0]
    if not real_fits:
        return 1.0
    K_hat = max(f.K for f in real_fits)
    lam_hat = min(f.lam for f in real_fits)
    Th = cell.Theta_bar
    load = model.Q + model.S.T @ Th + Th.T @ model.S + Th.T @ model.R @ Th
    beta2 = float(np.linalg.eigvalsh(0.5 * (load + load.T))[0])
    if beta2 <= 0:
        return 1.0
    return max(1.0, math.log(max(2.0 * K_hat / beta2, 1.0)) / lam_hat)


@dataclass(frozen=True)
class StateTurnpikeCertificate:
    """Two-sided envelope fits on the coupled state/control deviation."""

    left_fit: DecayFit | None
    right_fit: DecayFit | None
    tau: float
    two_sided: bool
    left_at_floor: bool
    right_at_floor: bool
    passed: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "left_fit": None if self.left_fit is None else self.left_fit.to_dict(),
            "right_fit": None if self.right_fit is None else self.right_fit.to_dict(),
            "tau": self.tau,
            "two_sided": self.two_sided,
            "left_at_floor": self.left_at_floor,
            "right_at_floor": self.right_at_floor,
            "passed": self.passed,
            "notes": list(self.notes),
        }


def _smooth_log(values: np.ndarray, width: int = 5) -> np.ndarray:
    logs = np.log(np.maximum(values, 1e-300))
    kernel = np.ones(width) / width
    pad = width // 2
    padded = np.concatenate([logs[:pad][::-1], logs, logs[-pad:][::-1]])
    return np.convolve(padded, kernel, mode="valid")


def certify_state_turnpike(
    bundle: TrajectoryBundle,
    tau: float,
    r2_min: float = 0.95,
) -> StateTurnpikeCertificate:
    """Fit decaying envelopes to d(t) = E[|X gap|^2 + |u gap|^2] on [0, T - tau].

    The left branch is fitted against t, the right branch against T - t;
    the split point is the deviation minimum, and the outer 10% of the
    interval is excluded on each side.  Points below the Monte Carlo noise
    floor (twice the standard error) are dropped; a branch entirely at the
    floor is reported as such and passes with a note.  With equal initial
    states only the right branch is required.
    """
    times, d, se = deviation_curve(bundle)
    T = bundle.cfg.T
    W = T - tau
    if W <= 0:
        raise ValueError("tau leaves an empty window")
    two_sided = bool(np.linalg.norm(bundle.cfg.x0 - bundle.cfg.xbar0) > 0)
    mask = times <= W + 1e-12
    times, d, se = times[mask], d[mask], se[mask]
    # noise floor: twice the standard error, but never below the round-off
    # level of the squared-deviation scale (pathwise cancellation garbage)
    floor = np.maximum(2.0 * se, 1e-15 * max(float(np.max(d)), 1e-30))

    lo, hi = 0.1 * W, 0.9 * W
    inner = (times >= lo) & (times <= hi)
    if np.count_nonzero(inner) < 16:
        raise FitError("record grid too coarse for envelope fits")
    smooth = _smooth_log(np.maximum(d, 1e-300))
    inner_idx = np.where(inner)[0]
    split_t = float(times[inner_idx[np.argmin(smooth[inner_idx])]])
    gap = 0.05 * W

    notes: list[str] = []

    def branch(sel, abscissa):
        usable = sel & (d > floor) & (d > 0)
        if np.count_nonzero(usable) < 8:
            return None, True
        return fit_exponential(abscissa[usable], d[usable]), False

    left_sel = (times >= lo) & (times <= split_t - gap)
    right_sel = (times >= split_t + gap) & (times <= hi)
    left_fit, left_at_floor = branch(left_sel, times)
    # regress the right branch against distance to the horizon
    right_fit, right_at_floor = branch(right_sel, times)
    if right_fit is not None:
        usable = right_sel & (d > floor) & (d > 0)
        s = (T - times)[usable][::-1]
        right_fit = fit_exponential(s, d[usable][::-1])

    ok = True
    if right_at_floor:
        notes.append("right branch at Monte Carlo noise floor")
    elif not (right_fit.lam > 0 and right_fit.r_squared >= r2_min):
        ok = False
        notes.append(
            f"right branch: lambda={right_fit.lam:.4g}, "
            f"R^2={right_fit.r_squared:.4f} below bar"
        )
    if two_sided:
        if left_at_floor:
            notes.append("left branch at Monte Carlo noise floor")
        elif not (left_fit.lam > 0 and left_fit.r_squared >= r2_min):
            ok = False
            notes.append(
                f"left branch: lambda={left_fit.lam:.4g}, "
                f"R^2={left_fit.r_squared:.4f} below bar"
            )
    else:
        if not left_at_floor:
            notes.append("equal starts but left branch above noise floor")
    return StateTurnpikeCertificate(
        left_fit=left_fit,
        right_fit=right_fit,
        tau=tau,
        two_sided=two_sided,
        left_at_floor=left_at_floor,
        right_at_floor=right_at_floor,
        passed=ok,
        notes=notes,
    )


@dataclass(frozen=True)
class TurnpikeCertificate:
    """Combined gain-convergence and state/control-transient certificate."""

    gain: CoefficientCertificate
    state: StateTurnpikeCertificate
    tau: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "passed": self.passed,
            "gain": self.gain.to_dict(),
            "state": self.state.to_dict(),
        }


def certify_turnpike(
    model: LQModel,
    fh: FiniteHorizonSolution,
    cell: CellSolution,
    bundle: TrajectoryBundle,
    gain_r2_min: float = 0.99,
    state_r2_min: float = 0.95,
) -> TurnpikeCertificate:
    gain = certify_coefficient_convergence(fh, cell, r2_min=gain_r2_min)
    tau = default_tau(gain, model, cell)
    state = certify_state_turnpike(bundle, tau, r2_min=state_r2_min)
    return TurnpikeCertificate(
        gain=gain, state=state, tau=tau, passed=gain.passed and state.passed
    )


@dataclass(frozen=True)
class ErgodicReport:
    """Average-cost behavior across a horizon sweep.

    One row per horizon: the analytic value per unit time, its distance to
    the constant c0, the Monte Carlo cost of the constant-gain control, and
    the (nonnegative, bounded) gap between the two.  ``checks`` records the
    three certified clauses.
    """

    horizons: list[float]
    rows: list[dict]
    c0: float
    static_value: float
    checks: dict
    passed: bool

    def to_dict(self) -> dict:
        return {
            "horizons": list(self.horizons),
            "c0": self.c0,
            "static_value": self.static_value,
            "rows": [dict(r) for r in self.rows],
            "checks": dict(self.checks),
            "passed": self.passed,
        }


def ergodic_report(
    model: LQModel,
    cell: CellSolution,
    horizons,
    cfg: SimConfig,
    h: float | None = None,
    record_points: int = 65,
) -> ErgodicReport:
    """Horizon sweep comparing V^T/T, c0 and the constant-gain cost.

    For each horizon: solves the backward system at step ``h`` (defaults
    to cfg.dt), evaluates the value at (0, cfg.x0) analytically, and runs
    the constant-gain loop from the same start to estimate its cost.
    Checks: (a) |V/T - c0| decreases and T |V/T - c0| stays within a factor
    2 across horizons, (b) the cost gap is nonnegative within the
    confidence interval and bounded across horizons (max/min <= 2 after
    interval widening), (c) c0 equals the static optimum value to 1e-9.
    """
    horizons = [float(T) for T in horizons]
    if sorted(horizons) != horizons or len(horizons) < 2:
        raise ValueError("horizons must be increasing, at least two")
    if h is None:
        h = cfg.dt
    static = static_from_cell(model, cell)
    c0 = cell.c0

    rows = []
    for T in horizons:
        fh = solve_finite_horizon(model, T, h)
        V = value_finite(fh, 0.0, cfg.x0)
        est = cost_along(
            model,
            simulate_cell_ensemble(model, cell, cfg.with_horizon(T), record_points),
            "cell",
            T,
        )
        gap = est.mean - V
        rows.append(
            {
                "T": T,
                "value": V,
                "value_per_time": V / T,
                "abs_gap_to_c0": abs(V / T - c0),
                "scaled_gap": T * abs(V / T - c0),
                "mc_cost": est.mean,
                "mc_stderr": est.stderr,
                "cost_gap": gap,
                "cost_gap_lo": gap - 2.0 * est.stderr,
                "cost_gap_hi": gap + 2.0 * est.stderr,
            }
        )

    diffs = [r["abs_gap_to_c0"] for r in rows]
    scaled = [r["scaled_gap"] for r in rows]
    decreasing = all(b < a for a, b in zip(diffs, diffs[1:]))
    scaled_pos = [s for s in scaled if s > 0]
    scaled_ok = bool(scaled_pos) and max(scaled_pos) <= 2.0 * min(scaled_pos)
    gap_nonneg = all(r["cost_gap_hi"] >= 0 for r in rows)
    lo_max = max(r["cost_gap_lo"] for r in rows)
    hi_min = min(r["cost_gap_hi"] for r in rows)
    gap_bounded = lo_max <= 2.0 * hi_min
    c0_matches = abs(c0 - static.L_value) <= 1e-9

    checks = {
        "value_rate_decreasing": decreasing,
        "scaled_gap_within_factor_2": scaled_ok,
        "cost_gap_nonnegative_within_ci": gap_nonneg,
        "cost_gap_bounded_across_horizons": gap_bounded,
        "c0_matches_static_value": c0_matches,
    }
    return ErgodicReport(
        horizons=horizons,
        rows=rows,
        c0=c0,
        static_value=static.L_value,
        checks=checks,
        passed=all(checks.values()),
    )
