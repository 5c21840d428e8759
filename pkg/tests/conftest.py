import numpy as np
import pytest

from stochlq import LQModel, find_stabilizer, solve_are_stabilizing
from stochlq.riccati import RiccatiError
from stochlq.stability import StabilityError

Z1 = [[0.0]]


def scalar_model(A=-1.0, B=1.0, C=0.0, D=0.0, b=0.0, sigma=0.0,
                 Q=1.0, S=0.0, R=1.0, q=0.0, r=0.0):
    return LQModel(A=[[A]], B=[[B]], C=[[C]], D=[[D]], b=[b], sigma=[sigma],
                   Q=[[Q]], S=[[S]], R=[[R]], q=[q], r=[r])


@pytest.fixture(scope="session")
def scalar_homogeneous():
    return scalar_model()


@pytest.fixture(scope="session")
def scalar_offset():
    return scalar_model(b=1.0, sigma=0.5)


@pytest.fixture(scope="session")
def twodim_model():
    return LQModel(
        A=[[-1.0, 0.5], [0.0, -0.8]], B=[[1.0, 0.0], [0.2, 1.0]],
        C=[[0.2, 0.0], [0.1, 0.2]], D=[[0.1, 0.0], [0.0, 0.1]],
        b=[1.0, 0.5], sigma=[0.3, 0.2],
        Q=[[1.0, 0.1], [0.1, 1.0]], S=[[0.1, 0.0], [0.0, 0.1]],
        R=[[1.0, 0.0], [0.0, 1.0]], q=[0.1, 0.0], r=[0.0, 0.05],
    )


def random_h1_model(gen: np.random.Generator, n=None, m=None,
                    noise_scale=0.3, offsets=True) -> LQModel:
    """Random model satisfying the positivity hypothesis."""
    n = int(gen.integers(1, 5)) if n is None else n
    m = int(gen.integers(1, 5)) if m is None else m
    A = gen.normal(size=(n, n)) * 0.8 - 0.5 * np.eye(n)
    B = gen.normal(size=(n, m))
    C = noise_scale * gen.normal(size=(n, n))
    D = noise_scale * gen.normal(size=(n, m))
    G = gen.normal(size=(n, n))
    Q = G @ G.T / n + 0.5 * np.eye(n)
    H = gen.normal(size=(m, m))
    R = H @ H.T / m + 0.5 * np.eye(m)
    S = 0.15 * gen.normal(size=(m, n))
    # keep the Schur combination comfortably positive definite
    for _ in range(10):
        schur = Q - S.T @ np.linalg.solve(R, S)
        if np.linalg.eigvalsh(0.5 * (schur + schur.T))[0] > 0.05:
            break
        S *= 0.5
    if offsets:
        b, sig = gen.normal(size=n), 0.5 * gen.normal(size=n)
        qv, rv = 0.5 * gen.normal(size=n), 0.5 * gen.normal(size=m)
    else:
        b = sig = np.zeros(n)
        qv, rv = np.zeros(n), np.zeros(m)
    return LQModel(A=A, B=B, C=C, D=D, b=b, sigma=sig, Q=Q, S=S, R=R, q=qv, r=rv)


def random_stabilizable_batch(seed: int, count: int, max_dim=4):
    """Batch of random models paired with solved stabilizing Riccati data."""
    gen = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        model = random_h1_model(
            gen,
            n=int(gen.integers(1, max_dim + 1)),
            m=int(gen.integers(1, max_dim + 1)),
        )
        try:
            theta0 = find_stabilizer(model)
            are = solve_are_stabilizing(model, theta0)
        except (StabilityError, RiccatiError):
            continue
        out.append((model, are))
    return out


@pytest.fixture(scope="session")
def random_solved_batch():
    return random_stabilizable_batch(seed=20240817, count=50)
