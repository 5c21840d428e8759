"""Experiment runner: load a model, solve, simulate, certify, emit artifacts.

Every subcommand writes three files into the output directory: a manifest
echoing the resolved parameters (no timestamps, so reruns are
byte-identical), a machine-readable ``result.json`` and a human-readable
``summary.txt``; simulation and certification commands add CSV files.
Exit codes: 0 pass, 2 certificate failure, 1 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, backend, rng
from .cell import (
    CellError,
    cell_residual,
    dump_cell_solution,
    enumerate_cell_solutions_special,
    solve_cell,
)
from .model import LQModel, ModelError, read_model, validate_model
from .riccati import (
    RiccatiError,
    dre_step_halving_error,
    fh_to_csv,
    solve_are_stabilizing,
    solve_finite_horizon,
    value_finite,
)
from .sde_lab import (
    SimConfig,
    SimulationError,
    bundle_to_csv,
    cost_along,
    deviation_curve,
    simulate_coupled_ensemble,
    stationarity_residual,
)
from .stability import StabilityError, find_stabilizer, is_l2_exp_stable, is_stabilizer, ClosedLoopPair
from .static_opt import StaticOptError, solve_static_kkt, static_from_cell
from .turnpike import (
    FitError,
    certify_coefficient_convergence,
    certify_turnpike,
    default_tau,
    ergodic_report,
)

EXIT_PASS = 0
EXIT_INPUT = 1
EXIT_CERT = 2

_CERT_ERRORS = (
    RiccatiError,
    StabilityError,
    CellError,
    StaticOptError,
    SimulationError,
    FitError,
)


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits with the documented input-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def _parse_vec(text: str, n: int, name: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ModelError(f"cannot parse {name}: {exc}", field=name) from exc
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise ModelError(f"{name} needs 1 or {n} entries, got {len(vals)}", field=name)
    return np.asarray(vals)


def _parse_mat(text: str, name: str) -> np.ndarray:
    try:
        rows = [
            [float(v) for v in row.split(",") if v.strip() != ""]
            for row in text.split(";")
        ]
        return np.asarray(rows, dtype=float)
    except ValueError as exc:
        raise ModelError(f"cannot parse {name}: {exc}", field=name) from exc


class _Experiment:
    """Output-directory bookkeeping shared by all subcommands."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.summary_lines: list[str] = []

    def log(self, line: str) -> None:
        self.summary_lines.append(line)
        print(line)

    def progress(self, line: str) -> None:
        print(line, file=sys.stderr)

    def write_manifest(self, extra: dict | None = None) -> None:
        doc = {
            "command": self.args.command,
            "package_version": __version__,
            "numpy_version": np.__version__,
            "backend": backend.backend_name(),
            "args": {
                k: _jsonable(v)
                for k, v in sorted(vars(self.args).items())
                if k != "func"
            },
        }
        if extra:
            doc.update(_jsonable(extra))
        self._write_json("manifest.json", doc)

    def finish(self, result: dict, passed: bool) -> int:
        result = dict(result)
        result["passed"] = bool(passed)
        self._write_json("result.json", _jsonable(result))
        (self.out / "summary.txt").write_text(
            "\n".join(self.summary_lines) + "\n", encoding="utf-8"
        )
        return EXIT_PASS if passed else EXIT_CERT

    def _write_json(self, name: str, doc: dict) -> None:
        (self.out / name).write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8"
        )


def _load(args) -> LQModel:
    path = Path(args.model)
    if not path.exists():
        raise ModelError(f"model file not found: {path}", field="model")
    return read_model(path)


def _sim_config(args, model: LQModel) -> SimConfig:
    if args.dt <= 0 or args.paths < 1 or args.horizon <= 0:
        raise ModelError("dt, paths and horizon must be positive")
    return SimConfig(
        T=args.horizon,
        dt=args.dt,
        n_paths=args.paths,
        seed=args.seed,
        x0=_parse_vec(args.x0, model.n, "x0"),
        xbar0=_parse_vec(args.xbar0, model.n, "xbar0"),
    )


def _solve_cell_chain(model):
    theta0 = find_stabilizer(model)
    are = solve_are_stabilizing(model, theta0)
    return are, solve_cell(model, are)


def _probe_states(model: LQModel, seed: int, count: int = 100, scale: float = 3.0):
    return rng.normals(seed, np.arange(count), np.arange(model.n)) * scale


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_validate(exp: _Experiment) -> int:
    model = _load(exp.args)
    report = validate_model(model, tol=exp.args.tol)
    exp.write_manifest()
    exp.log(f"model: n={model.n}, m={model.m}")
    exp.log(
        f"min eig Q={report.min_eig_q:.6g}  R={report.min_eig_r:.6g}  "
        f"Q-S'R^-1S={report.min_eig_schur:.6g}"
    )
    exp.log(f"h1_ok: {report.h1_ok}")
    return exp.finish(report.to_dict(), report.h1_ok)


def _cmd_stability(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    open_loop = is_l2_exp_stable(ClosedLoopPair(model.A, model.C))
    exp.log(f"uncontrolled abscissa: {open_loop.spectral_abscissa:.6g} "
            f"(stable: {open_loop.stable})")
    result = {"open_loop": open_loop.to_dict()}
    if exp.args.theta is not None:
        Theta = _parse_mat(exp.args.theta, "theta")
        cert = is_stabilizer(model, Theta)
        result["candidate"] = {"Theta": Theta, "cert": cert.to_dict()}
        exp.log(f"candidate gain abscissa: {cert.spectral_abscissa:.6g} "
                f"(stable: {cert.stable})")
        return exp.finish(result, cert.stable)
    try:
        Theta = find_stabilizer(model)
    except StabilityError as exc:
        exp.log(f"stabilizer search failed: {exc}")
        result["stabilizer"] = None
        return exp.finish(result, False)
    cert = is_stabilizer(model, Theta)
    exp.log(f"found stabilizer with abscissa {cert.spectral_abscissa:.6g}")
    result["stabilizer"] = {"Theta": Theta, "cert": cert.to_dict()}
    return exp.finish(result, cert.stable)


def _cmd_are(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    theta0 = find_stabilizer(model)
    are = solve_are_stabilizing(model, theta0)
    exp.log(f"Newton iterations: {are.newton_iters}")
    exp.log(f"final residual: {are.final_residual:.3e}")
    exp.log(f"P = {np.array2string(are.P, precision=10)}")
    exp.log(f"Theta = {np.array2string(are.Theta_bar, precision=10)}")
    result = {
        "P": are.P,
        "Theta_bar": are.Theta_bar,
        "newton_iters": are.newton_iters,
        "final_residual": are.final_residual,
    }
    return exp.finish(result, True)


def _cmd_finite(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    exp.progress(f"integrating backward system at h={exp.args.dt} ...")
    fh = solve_finite_horizon(model, exp.args.horizon, exp.args.dt)
    csv_path = exp.out / "finite.csv"
    fh_to_csv(fh, csv_path)
    halving = None
    if exp.args.check_order:
        halving = dre_step_halving_error(model, exp.args.horizon, exp.args.dt)
        exp.log(f"step-halving error estimate: {halving:.3e}")
    x = _parse_vec(exp.args.x0, model.n, "x0")
    v0 = value_finite(fh, 0.0, x)
    exp.log(f"nodes: {len(fh.grid)}  (h = {fh.h:.6g})")
    exp.log(f"P(0) = {np.array2string(fh.P_grid[0], precision=10)}")
    exp.log(f"value at (0, x0): {v0:.10g}")
    exp.log(f"wrote {csv_path}")
    result = {
        "nodes": len(fh.grid),
        "P0": fh.P_grid[0],
        "p0_vec": fh.p_grid[0],
        "p0_scalar": fh.p0_grid[0],
        "value_at_x0": v0,
        "step_halving_error": halving,
        "csv": csv_path.name,
    }
    return exp.finish(result, True)


def _cmd_cell(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    are, cell = _solve_cell_chain(model)
    xs = _probe_states(model, exp.args.seed)
    residual = cell_residual(model, cell, xs)
    (exp.out / "cell.json").write_text(dump_cell_solution(cell), encoding="utf-8")
    exp.log(f"c0 = {cell.c0:.10g}")
    exp.log(f"p = {np.array2string(cell.p, precision=10)}")
    exp.log(f"theta = {np.array2string(cell.theta_bar, precision=10)}")
    exp.log(f"max |H - c0| over {len(xs)} probes: {residual:.3e}")
    ok = residual <= exp.args.residual_tol
    result = {
        "c0": cell.c0,
        "p": cell.p,
        "Theta_bar": cell.Theta_bar,
        "theta_bar": cell.theta_bar,
        "stabilizing": cell.stabilizing,
        "max_residual": residual,
        "residual_tol": exp.args.residual_tol,
    }
    return exp.finish(result, ok)


def _cmd_cell_enum(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    eye = np.eye(model.n)
    special = (
        model.m == model.n
        and np.array_equal(model.B, eye)
        and np.array_equal(model.R, eye)
        and not model.C.any()
        and not model.D.any()
        and not model.S.any()
        and np.max(np.abs(model.A - model.A.T)) <= 1e-12
    )
    if not special:
        raise ModelError(
            "enumeration needs the special structure: m=n, B=R=I, C=D=S=0, symmetric A"
        )
    sols = enumerate_cell_solutions_special(
        model.A, model.Q, model.b, model.sigma, model.q, model.r
    )
    xs = _probe_states(model, exp.args.seed)
    rows = []
    ok = True
    n_stab = 0
    for i, sol in enumerate(sols):
        res = cell_residual(model, sol, xs)
        gap_eigs = np.linalg.eigvalsh(sol.P - model.A)
        positive = bool(gap_eigs[0] > 0)
        n_stab += positive
        ok = ok and res <= exp.args.residual_tol
        rows.append(
            {
                "index": i,
                "P": sol.P,
                "p": sol.p,
                "c0": sol.c0,
                "stabilizing": sol.stabilizing,
                "P_minus_A_positive": positive,
                "residual": res,
            }
        )
        exp.log(
            f"branch {i}: c0={sol.c0:.8g} residual={res:.2e} "
            f"P-A>0: {positive} stabilizing: {sol.stabilizing}"
        )
    ok = ok and n_stab == 1
    exp.log(f"branches with P - A > 0: {n_stab} (expected exactly 1)")
    return exp.finish(
        {"branches": rows, "count": len(sols), "positive_branches": n_stab}, ok
    )


def _cmd_static(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    are, cell = _solve_cell_chain(model)
    kkt = solve_static_kkt(model, are.P)
    closed = static_from_cell(model, cell)
    dev = max(
        float(np.linalg.norm(kkt.x_star - closed.x_star)),
        float(np.linalg.norm(kkt.u_star - closed.u_star)),
        float(np.linalg.norm(kkt.y_star - closed.y_star)),
    )
    c0_gap = abs(cell.c0 - kkt.L_value)
    exp.log(f"x* = {np.array2string(kkt.x_star, precision=10)}")
    exp.log(f"u* = {np.array2string(kkt.u_star, precision=10)}")
    exp.log(f"y* = {np.array2string(kkt.y_star, precision=10)}")
    exp.log(f"L(x*, u*) = {kkt.L_value:.10g}   c0 = {cell.c0:.10g}")
    exp.log(f"route disagreement: {dev:.3e}   |c0 - L|: {c0_gap:.3e}")
    ok = dev <= 1e-9 and c0_gap <= 1e-9
    result = {
        "x_star": kkt.x_star,
        "u_star": kkt.u_star,
        "y_star": kkt.y_star,
        "sigma_star": kkt.sigma_star,
        "L_value": kkt.L_value,
        "c0": cell.c0,
        "route_disagreement": dev,
        "c0_vs_L": c0_gap,
    }
    return exp.finish(result, ok)


def _make_bundle(exp: _Experiment, model: LQModel):
    cfg = _sim_config(exp.args, model)
    exp.progress(f"integrating backward system at h={cfg.dt} ...")
    fh = solve_finite_horizon(model, cfg.T, cfg.dt)
    are, cell = _solve_cell_chain(model)
    exp.progress(
        f"simulating {cfg.n_paths} paths x {cfg.n_steps} steps "
        f"({backend.backend_name()} backend) ..."
    )
    bundle = simulate_coupled_ensemble(
        model, fh, cell, cfg, record_points=exp.args.record_points
    )
    return cfg, fh, cell, bundle


def _cmd_simulate(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    cfg, fh, cell, bundle = _make_bundle(exp, model)
    csv_path = exp.out / "bundle.csv"
    bundle_to_csv(bundle, csv_path)
    cost_fin = cost_along(model, bundle, "finite", cfg.T)
    cost_cell = cost_along(model, bundle, "cell", cfg.T)
    _, resid = stationarity_residual(model, fh, bundle)
    v0 = value_finite(fh, 0.0, cfg.x0)
    exp.log(f"analytic value at (0, x0): {v0:.8g}")
    exp.log(f"MC cost, optimal loop: {cost_fin.mean:.8g} +/- {cost_fin.stderr:.2g}")
    exp.log(f"MC cost, constant loop: {cost_cell.mean:.8g} +/- {cost_cell.stderr:.2g}")
    exp.log(f"max stationarity residual: {np.max(resid):.3e}")
    exp.log(f"wrote {csv_path}")
    result = {
        "value_at_x0": v0,
        "cost_finite": {"mean": cost_fin.mean, "stderr": cost_fin.stderr},
        "cost_cell": {"mean": cost_cell.mean, "stderr": cost_cell.stderr},
        "max_stationarity_residual": float(np.max(resid)),
        "csv": csv_path.name,
    }
    return exp.finish(result, True)


def _cmd_turnpike(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    cfg, fh, cell, bundle = _make_bundle(exp, model)
    cert = certify_turnpike(model, fh, cell, bundle)

    times, dev, se = deviation_curve(bundle)
    with open(exp.out / "turnpike_deviation.csv", "w", encoding="utf-8") as out:
        out.write("t,deviation,stderr,fit_left,fit_right\n")
        for t, d, s in zip(times, dev, se):
            left = right = ""
            lf, rf = cert.state.left_fit, cert.state.right_fit
            if lf is not None and lf.window[0] <= t <= lf.window[1]:
                left = repr(lf.K * np.exp(-lf.lam * t))
            if rf is not None and rf.window[0] <= cfg.T - t <= rf.window[1]:
                right = repr(rf.K * np.exp(-rf.lam * (cfg.T - t)))
            out.write(f"{t!r},{d!r},{s!r},{left},{right}\n")

    s_vals = cfg.T - fh.grid
    dev_cols = {
        "dev_P": np.linalg.norm(fh.P_grid - cell.P, axis=(1, 2)),
        "dev_p": np.linalg.norm(fh.p_grid - cell.p, axis=1),
        "dev_Theta": np.linalg.norm(fh.Theta_grid - cell.Theta_bar, axis=(1, 2)),
        "dev_theta": np.linalg.norm(fh.theta_grid - cell.theta_bar, axis=1),
    }
    with open(exp.out / "coefficient_deviation.csv", "w", encoding="utf-8") as out:
        out.write("s," + ",".join(dev_cols) + "\n")
        for i in range(len(s_vals) - 1, -1, -1):
            row = [s_vals[i]] + [col[i] for col in dev_cols.values()]
            out.write(",".join(repr(float(v)) for v in row) + "\n")

    for name, fit in cert.gain.fits.items():
        if fit is None:
            exp.log(f"gain {name}: converged to machine precision")
        else:
            exp.log(
                f"gain {name}: lambda={fit.lam:.4g} K={fit.K:.4g} "
                f"R^2={fit.r_squared:.5f}"
            )
    exp.log(f"tau = {cert.tau:.4g}")
    for side, fit, at_floor in (
        ("left", cert.state.left_fit, cert.state.left_at_floor),
        ("right", cert.state.right_fit, cert.state.right_at_floor),
    ):
        if at_floor or fit is None:
            exp.log(f"state {side}: at noise floor")
        else:
            exp.log(
                f"state {side}: lambda={fit.lam:.4g} R^2={fit.r_squared:.5f}"
            )
    exp.log(f"verdict: {'pass' if cert.passed else 'FAIL'}")
    return exp.finish(cert.to_dict(), cert.passed)


def _cmd_ergodic(exp: _Experiment) -> int:
    model = _load(exp.args)
    exp.write_manifest()
    horizons = [float(v) for v in exp.args.horizons.split(",") if v.strip()]
    are, cell = _solve_cell_chain(model)
    args = exp.args
    cfg = SimConfig(
        T=horizons[-1],
        dt=args.dt,
        n_paths=args.paths,
        seed=args.seed,
        x0=_parse_vec(args.x0, model.n, "x0"),
        xbar0=_parse_vec(args.xbar0, model.n, "xbar0"),
    )
    exp.progress(f"horizon sweep {horizons} with {cfg.n_paths} paths ...")
    report = ergodic_report(model, cell, horizons, cfg)
    with open(exp.out / "ergodic.csv", "w", encoding="utf-8") as out:
        cols = [
            "T", "value", "value_per_time", "abs_gap_to_c0", "scaled_gap",
            "mc_cost", "mc_stderr", "cost_gap", "cost_gap_lo", "cost_gap_hi",
        ]
        out.write(",".join(cols) + "\n")
        for row in report.rows:
            out.write(",".join(repr(float(row[c])) for c in cols) + "\n")
    exp.log(f"c0 = {report.c0:.10g}  L(x*,u*) = {report.static_value:.10g}")
    for row in report.rows:
        exp.log(
            f"T={row['T']:g}: V/T={row['value_per_time']:.8g} "
            f"T|V/T-c0|={row['scaled_gap']:.4g} "
            f"gap={row['cost_gap']:.4g} (+/- {2 * row['mc_stderr']:.2g})"
        )
    for name, ok in report.checks.items():
        exp.log(f"check {name}: {'pass' if ok else 'FAIL'}")
    return exp.finish(report.to_dict(), report.passed)


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stochlq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--model", required=True, help="model JSON path")
        p.add_argument("--out", default="stochlq-out", help="output directory")
        p.add_argument("--seed", type=int, default=42, help="64-bit seed")
        return p

    p = add("validate", _cmd_validate, "check the positivity hypothesis")
    p.add_argument("--tol", type=float, default=1e-12)

    p = add("stability", _cmd_stability, "stability certificate / stabilizer search")
    p.add_argument("--theta", default=None, help="gain rows 'a,b;c,d' to certify")

    add("are", _cmd_are, "stabilizing algebraic Riccati solution")

    p = add("finite", _cmd_finite, "finite-horizon backward system + CSV")
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--x0", default="2")
    p.add_argument("--check-order", action="store_true", dest="check_order",
                   help="also report the step-halving error estimate")

    p = add("cell", _cmd_cell, "constant-Hamiltonian solution + residual report")
    p.add_argument("--residual-tol", type=float, default=1e-8, dest="residual_tol")

    p = add("cell-enum", _cmd_cell_enum, "enumerate sign-pattern solutions")
    p.add_argument("--residual-tol", type=float, default=1e-8, dest="residual_tol")

    add("static", _cmd_static, "static optimum via both routes + agreement")

    for name, func, help_text in (
        ("simulate", _cmd_simulate, "coupled Monte Carlo ensemble + CSV"),
        ("turnpike", _cmd_turnpike, "full turnpike certificate"),
    ):
        p = add(name, func, help_text)
        p.add_argument("--horizon", type=float, default=20.0)
        p.add_argument("--dt", type=float, default=1e-3)
        p.add_argument("--paths", type=int, default=1000)
        p.add_argument("--x0", default="2")
        p.add_argument("--xbar0", default="0")
        p.add_argument("--record-points", type=int, default=401,
                       dest="record_points")

    p = add("ergodic", _cmd_ergodic, "horizon sweep of average cost")
    p.add_argument("--horizons", default="10,20,40")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--x0", default="2")
    p.add_argument("--xbar0", default="0")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(_Experiment(args))
    except ModelError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _CERT_ERRORS as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERT


if __name__ == "__main__":
    raise SystemExit(main())
