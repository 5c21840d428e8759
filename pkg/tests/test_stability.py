import numpy as np
import pytest

from stochlq import (
    ClosedLoopPair,
    StabilityError,
    find_stabilizer,
    is_l2_exp_stable,
    is_stabilizer,
    lyap_operator_matrix,
    solve_generalized_lyapunov,
)
from conftest import random_h1_model, scalar_model


def pair(a, c):
    return ClosedLoopPair(np.atleast_2d(a), np.atleast_2d(c))


def apply_operator(p, P):
    return p.Ahat.T @ P + P @ p.Ahat + p.Chat.T @ P @ p.Chat


def test_operator_matrix_scalar():
    assert np.allclose(lyap_operator_matrix(pair(-1.0, 0.0)), [[-2.0]], atol=1e-14)
    # 2*(-1) + 1^2
    assert np.allclose(lyap_operator_matrix(pair(-1.0, 1.0)), [[-1.0]], atol=1e-14)


def test_operator_matrix_matches_direct_evaluation():
    gen = np.random.default_rng(3)
    p = pair(gen.normal(size=(2, 2)), gen.normal(size=(2, 2)))
    M = lyap_operator_matrix(p)
    for _ in range(100):
        G = gen.normal(size=(2, 2))
        P = G + G.T
        lhs = (M @ P.reshape(-1, order="F")).reshape((2, 2), order="F")
        assert np.max(np.abs(lhs - apply_operator(p, P))) < 1e-12


def test_operator_matrix_linearity():
    gen = np.random.default_rng(4)
    p = pair(gen.normal(size=(3, 3)), gen.normal(size=(3, 3)))
    M = lyap_operator_matrix(p)
    G1, G2 = gen.normal(size=(3, 3)), gen.normal(size=(3, 3))
    P1, P2 = G1 + G1.T, G2 + G2.T
    alpha = 0.7321
    lhs = M @ (alpha * P1 + P2).reshape(-1, order="F")
    rhs = alpha * (M @ P1.reshape(-1, order="F")) + M @ P2.reshape(-1, order="F")
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_lyapunov_solve_scalar_multiplicative():
    # -2P + P = -1  =>  P = 1
    P = solve_generalized_lyapunov(pair(-1.0, 1.0), np.eye(1))
    assert np.allclose(P, [[1.0]], atol=1e-12)


def test_lyapunov_solve_scalar_deterministic():
    P = solve_generalized_lyapunov(pair(-1.0, 0.0), np.eye(1))
    assert np.allclose(P, [[0.5]], atol=1e-12)


def test_lyapunov_solve_decoupled_2d():
    P = solve_generalized_lyapunov(pair(-np.eye(2), np.zeros((2, 2))), np.eye(2))
    assert np.allclose(P, 0.5 * np.eye(2), atol=1e-12)


def test_lyapunov_singular_operator_reports_sigma():
    with pytest.raises(StabilityError, match="singular"):
        solve_generalized_lyapunov(pair(0.0, 0.0), np.eye(1))


def test_stability_certificates_scalar():
    cert = is_l2_exp_stable(pair(-1.0, 0.0))
    assert cert.stable
    assert cert.spectral_abscissa == pytest.approx(-2.0)
    assert np.allclose(cert.lyapunov_P, [[0.5]], atol=1e-12)
    assert cert.min_eig_P > 0

    cert = is_l2_exp_stable(pair(0.5, 0.0))
    assert not cert.stable
    assert cert.spectral_abscissa == pytest.approx(1.0)
    assert cert.lyapunov_P is None


def test_noise_can_destabilize():
    # abscissa = 2*(-1) + 1.5^2 = 0.25
    cert = is_l2_exp_stable(pair(-1.0, 1.5))
    assert not cert.stable
    assert cert.spectral_abscissa == pytest.approx(0.25)


def test_is_stabilizer_examples():
    assert is_stabilizer(scalar_model(A=-1.0), np.zeros((1, 1))).stable
    assert is_stabilizer(scalar_model(A=1.0), [[-2.0]]).stable
    # drift -1 but diffusion -2: abscissa -2 + 4 = 2
    cert = is_stabilizer(scalar_model(A=1.0, D=1.0), [[-2.0]])
    assert not cert.stable
    assert cert.spectral_abscissa == pytest.approx(2.0)


def test_find_stabilizer_already_stable():
    Theta = find_stabilizer(scalar_model(A=-1.0, B=0.0))
    assert np.allclose(Theta, [[0.0]], atol=1e-14)


def test_find_stabilizer_certifies_result():
    model = scalar_model(A=1.0, B=1.0)
    Theta = find_stabilizer(model)
    assert is_stabilizer(model, Theta).stable
    assert Theta[0, 0] < -1.0


def test_find_stabilizer_unstabilizable():
    with pytest.raises(StabilityError, match="no stabilizer found"):
        find_stabilizer(scalar_model(A=1.0, B=0.0))


def test_user_candidate_short_circuits():
    model = scalar_model(A=1.0, B=1.0)
    Theta = find_stabilizer(model, theta0=[[-3.0]])
    assert np.allclose(Theta, [[-3.0]], atol=1e-14)


def _random_pair(gen, n):
    A = gen.normal(size=(n, n))
    C = 0.4 * gen.normal(size=(n, n))
    return pair(A, C)


def test_spectrum_lyapunov_equivalence():
    # abscissa < 0 iff the identity-loaded solve is positive definite
    gen = np.random.default_rng(11)
    stable_seen = unstable_seen = 0
    while stable_seen < 50 or unstable_seen < 50:
        p = _random_pair(gen, int(gen.integers(1, 3)))
        cert = is_l2_exp_stable(p)
        if cert.stable:
            stable_seen += 1
            assert cert.min_eig_P > 0
        else:
            unstable_seen += 1
            try:
                P = solve_generalized_lyapunov(p, np.eye(p.n))
            except StabilityError:
                continue
            assert np.linalg.eigvalsh(P)[0] <= 1e-9


def test_stable_pair_monte_carlo_decay():
    # moment curve of the uncontrolled stable loop decays; log-linear slope < 0
    from stochlq import CellSolution, SimConfig, moment_curve
    from stochlq.sde_lab import simulate_cell_ensemble

    model = scalar_model(A=-1.0, B=0.0, C=0.6)
    cert = is_l2_exp_stable(pair(-1.0, 0.6))
    assert cert.stable
    cell = CellSolution(
        P=np.eye(1), p=np.zeros(1), c0=0.0,
        Theta_bar=np.zeros((1, 1)), theta_bar=np.zeros(1),
        stabilizing=True, closed_loop_cond=1.0,
    )
    cfg = SimConfig(T=4.0, dt=1e-3, n_paths=4000, seed=5, x0=[1.0], xbar0=[1.0])
    bundle = simulate_cell_ensemble(model, cell, cfg, record_points=41)
    curve = moment_curve(bundle, "cell", order=2)
    slope = np.polyfit(curve.times, np.log(curve.values), 1)[0]
    assert slope < -0.5
