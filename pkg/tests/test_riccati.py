import math

import numpy as np
import pytest

from stochlq import (
    are_residual,
    complete_finite_horizon,
    find_stabilizer,
    integrate_dre,
    hamiltonian,
    solve_are_stabilizing,
    solve_finite_horizon,
    value_finite,
)
from stochlq.riccati import RiccatiError, dre_step_halving_error, fh_to_csv
from stochlq.stability import is_stabilizer
from conftest import scalar_model

SQRT2 = math.sqrt(2.0)
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
# cell-problem closed forms for the scalar offset model (b=1, sigma=0.5)
P_SCALAR = SQRT2 - 1.0
p_SCALAR = (SQRT2 - 1.0) / SQRT2


def test_are_scalar_closed_form():
    model = scalar_model()
    sol = solve_are_stabilizing(model, np.zeros((1, 1)))
    # root of P^2 + 2P - 1 = 0
    assert abs(sol.P[0, 0] - P_SCALAR) < 1e-12
    assert abs(sol.Theta_bar[0, 0] + P_SCALAR) < 1e-12
    assert sol.final_residual <= 1e-9


def test_are_degenerates_to_lyapunov_without_control():
    model = scalar_model(B=0.0)
    sol = solve_are_stabilizing(model, np.zeros((1, 1)))
    assert abs(sol.P[0, 0] - 0.5) < 1e-12


def test_are_with_state_noise_golden_ratio():
    # P + 1 - P^2 = 0 with stabilizing root (1 + sqrt 5)/2
    model = scalar_model(A=0.0, C=1.0)
    sol = solve_are_stabilizing(model, [[-2.0]])
    assert abs(sol.P[0, 0] - GOLDEN) < 1e-12
    # closed loop: 2(A + B Theta) + C^2 = 1 - 2P < 0
    assert 2.0 * sol.Theta_bar[0, 0] + 1.0 < 0
    assert is_stabilizer(model, sol.Theta_bar).stable


def test_are_requires_stabilizing_start():
    with pytest.raises(RiccatiError, match="not stabilizing"):
        solve_are_stabilizing(scalar_model(A=1.0), np.zeros((1, 1)))


def test_newton_residual_monotone_after_first_step(random_solved_batch):
    checked = 0
    for _, are in random_solved_batch:
        hist = are.residual_history
        if len(hist) >= 3:
            assert all(b <= a * (1 + 1e-9) for a, b in zip(hist[1:], hist[2:]))
            checked += 1
    assert checked >= 10


def test_are_invariants_on_random_batch(random_solved_batch):
    for model, are in random_solved_batch:
        assert np.linalg.norm(are_residual(model, are.P), "fro") <= 1e-9
        assert is_stabilizer(model, are.Theta_bar).stable
        G = model.R + model.D.T @ are.P @ model.D
        assert np.linalg.eigvalsh(0.5 * (G + G.T))[0] > 0


def test_dre_terminal_condition(scalar_offset):
    P_grid = integrate_dre(scalar_offset, 2.0, 1e-2)
    assert np.all(P_grid[-1] == 0.0)


def test_dre_reaches_are_limit():
    model = scalar_model()
    P_grid = integrate_dre(model, 20.0, 1e-3)
    assert abs(P_grid[0, 0, 0] - P_SCALAR) < 1e-6


def test_dre_fourth_order_self_consistency():
    model = scalar_model()
    e1 = dre_step_halving_error(model, 2.0, 2e-2)
    e2 = dre_step_halving_error(model, 2.0, 1e-2)
    ratio = e1 / e2
    assert 10.0 < ratio < 24.0


def test_dre_step_must_divide_horizon(scalar_offset):
    with pytest.raises(ValueError, match="does not divide"):
        integrate_dre(scalar_offset, 1.0, 0.3)


def test_homogeneous_completion_is_zero(scalar_homogeneous):
    fh = solve_finite_horizon(scalar_homogeneous, 5.0, 1e-2)
    assert np.max(np.abs(fh.p_grid)) == 0.0
    assert np.max(np.abs(fh.theta_grid)) == 0.0
    assert np.max(np.abs(fh.p0_grid)) == 0.0


def test_offset_linear_coefficient_reaches_limit(scalar_offset):
    fh = solve_finite_horizon(scalar_offset, 20.0, 1e-3)
    assert abs(fh.p_grid[0, 0] - p_SCALAR) < 1e-5
    assert abs(fh.theta_grid[0, 0] + p_SCALAR) < 1e-5


def test_value_terminal_and_homogeneous(scalar_homogeneous):
    fh = solve_finite_horizon(scalar_homogeneous, 5.0, 1e-2)
    assert value_finite(fh, 5.0, [3.0]) == 0.0
    v = value_finite(fh, 0.0, [3.0])
    assert abs(v - 0.5 * fh.P_grid[0, 0, 0] * 9.0) < 1e-14
    with pytest.raises(ValueError):
        value_finite(fh, 5.1, [1.0])
    with pytest.raises(ValueError):
        value_finite(fh, -0.1, [1.0])


def test_value_interpolates_between_nodes(scalar_offset):
    fh = solve_finite_horizon(scalar_offset, 2.0, 1e-2)
    t = 1.0 + 0.5e-2
    v = value_finite(fh, t, [1.0])
    lo = value_finite(fh, 1.0, [1.0])
    hi = value_finite(fh, 1.0 + 1e-2, [1.0])
    assert min(lo, hi) - 1e-12 <= v <= max(lo, hi) + 1e-12


def test_hjb_residual_on_grid(scalar_offset):
    fh = solve_finite_horizon(scalar_offset, 10.0, 1e-3)
    gen = np.random.default_rng(2)
    h = fh.h
    idx = gen.integers(1, len(fh.grid) - 1, size=20)
    for i in idx:
        for x in gen.normal(size=(20, 1)) * 2.0:
            v_plus = value_finite(fh, fh.grid[i + 1], x)
            v_minus = value_finite(fh, fh.grid[i - 1], x)
            dV = (v_plus - v_minus) / (2.0 * h)
            grad = fh.P_grid[i] @ x + fh.p_grid[i]
            H = hamiltonian(scalar_offset, x, grad, fh.P_grid[i]).value
            assert abs(dV + H) <= 1e-6 * (1.0 + float(x @ x))


def test_horizon_monotonicity_homogeneous(scalar_homogeneous):
    model = scalar_homogeneous
    p_inf = solve_are_stabilizing(model, np.zeros((1, 1))).P[0, 0]
    values = [integrate_dre(model, T, 1e-2)[0, 0, 0] for T in (1.0, 2.0, 4.0, 8.0)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert all(v <= p_inf + 1e-9 for v in values)


def test_exponential_convergence_to_are():
    model = scalar_model()
    T = 20.0
    fh_P = integrate_dre(model, T, 1e-3)
    P_inf = solve_are_stabilizing(model, np.zeros((1, 1))).P
    s = T - np.arange(len(fh_P)) * 1e-3
    dev = np.abs(fh_P[:, 0, 0] - P_inf[0, 0])
    mask = (s >= 2.0) & (s <= T / 2.0) & (dev > 1e-12)
    slope, intercept = np.polyfit(s[mask], np.log(dev[mask]), 1)
    fitted = slope * s[mask] + intercept
    ss_res = np.sum((np.log(dev[mask]) - fitted) ** 2)
    ss_tot = np.sum((np.log(dev[mask]) - np.mean(np.log(dev[mask]))) ** 2)
    assert slope < 0
    assert 1.0 - ss_res / ss_tot >= 0.99


def test_csv_export_round_trip_shape(tmp_path, twodim_model):
    fh = solve_finite_horizon(twodim_model, 1.0, 1e-2)
    path = tmp_path / "fh.csv"
    fh_to_csv(fh, path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header[0] == "t"
    # t + n^2 + n + 1 + m*n + m columns
    assert len(header) == 1 + 4 + 2 + 1 + 4 + 2
    assert len(lines) == 1 + len(fh.grid)
    first = dict(zip(header, lines[1].split(",")))
    assert float(first["t"]) == 0.0
    assert float(first["P_0_0"]) == fh.P_grid[0, 0, 0]


def test_complete_finite_horizon_accepts_raw_grid(scalar_offset):
    P_grid = integrate_dre(scalar_offset, 2.0, 1e-2)
    fh = complete_finite_horizon(scalar_offset, P_grid, 2.0)
    assert fh.p_grid.shape == (201, 1)
    assert fh.p0_grid[-1] == 0.0


def test_find_stabilizer_feeds_newton(twodim_model):
    theta0 = find_stabilizer(twodim_model)
    sol = solve_are_stabilizing(twodim_model, theta0)
    assert sol.final_residual <= 1e-9
