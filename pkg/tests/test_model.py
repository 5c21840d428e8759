import json

import numpy as np
import pytest

from stochlq import (
    LQModel,
    ModelError,
    dump_model,
    load_model,
    validate_model,
)
from conftest import random_h1_model, scalar_model


def test_validate_scalar_identity():
    report = validate_model(scalar_model(), tol=1e-12)
    assert report.h1_ok
    assert report.min_eig_q == 1.0
    assert report.min_eig_r == 1.0
    assert report.min_eig_schur == 1.0


def test_validate_boundary_s_equals_one():
    # Q - S'R^-1 S = 1 - 1 = 0 sits exactly on the boundary
    report = validate_model(scalar_model(S=1.0))
    assert not report.h1_ok
    assert abs(report.min_eig_schur) < 1e-14
    assert report.messages


def test_validate_2d_schur():
    model = LQModel(
        A=np.zeros((2, 2)), B=np.eye(2), C=np.zeros((2, 2)), D=np.zeros((2, 2)),
        b=np.zeros(2), sigma=np.zeros(2),
        Q=np.eye(2), S=0.5 * np.eye(2), R=np.eye(2),
        q=np.zeros(2), r=np.zeros(2),
    )
    report = validate_model(model)
    # direct arithmetic: I - (0.5 I)' I (0.5 I) = 0.75 I
    assert report.h1_ok
    assert abs(report.min_eig_schur - 0.75) < 1e-14


def test_validate_is_deterministic_and_pure(twodim_model):
    before = twodim_model.Q.copy()
    r1 = validate_model(twodim_model)
    r2 = validate_model(twodim_model)
    assert r1 == r2
    assert np.array_equal(twodim_model.Q, before)


def test_dimension_mismatch_names_field():
    with pytest.raises(ModelError) as err:
        LQModel(A=[[1.0]], B=[[1.0]], C=[[0.0]], D=[[0.0, 1.0]],
                b=[0.0], sigma=[0.0], Q=[[1.0]], S=[[0.0]], R=[[1.0]],
                q=[0.0], r=[0.0])
    assert err.value.field == "D"


def test_round_trip_identity_scalar():
    model = scalar_model(A=-1.2345678901234567, b=0.1)
    assert load_model(dump_model(model)) == model


def test_round_trip_identity_random():
    gen = np.random.default_rng(7)
    for _ in range(25):
        model = random_h1_model(gen)
        assert load_model(dump_model(model)) == model


def test_load_missing_key_names_field():
    doc = json.loads(dump_model(scalar_model()))
    del doc["R"]
    with pytest.raises(ModelError) as err:
        load_model(json.dumps(doc))
    assert "R" in str(err.value)
    assert err.value.field == "R"


def test_load_rejects_unknown_keys():
    doc = json.loads(dump_model(scalar_model()))
    doc["extra"] = 1
    with pytest.raises(ModelError) as err:
        load_model(json.dumps(doc))
    assert "extra" in str(err.value)


def test_load_rejects_asymmetric_q():
    doc = json.loads(dump_model(scalar_model()))
    doc["n"] = 2
    doc["m"] = 1
    doc["A"] = [[0.0, 0.0], [0.0, 0.0]]
    doc["B"] = [[1.0], [0.0]]
    doc["C"] = [[0.0, 0.0], [0.0, 0.0]]
    doc["D"] = [[0.0], [0.0]]
    doc["b"] = [0.0, 0.0]
    doc["sigma"] = [0.0, 0.0]
    doc["Q"] = [[1.0, 0.1], [0.2, 1.0]]
    doc["S"] = [[0.0, 0.0]]
    doc["q"] = [0.0, 0.0]
    with pytest.raises(ModelError) as err:
        load_model(json.dumps(doc))
    assert err.value.field == "Q"
    assert "not symmetric" in str(err.value)


def test_symmetrization_within_tolerance():
    # asymmetry below 1e-12 is absorbed by (M + M')/2
    eps = 1e-14
    model = LQModel(
        A=np.zeros((2, 2)), B=np.eye(2), C=np.zeros((2, 2)), D=np.zeros((2, 2)),
        b=np.zeros(2), sigma=np.zeros(2),
        Q=[[1.0, 0.1 + eps], [0.1, 1.0]], S=np.zeros((2, 2)), R=np.eye(2),
        q=np.zeros(2), r=np.zeros(2),
    )
    assert np.array_equal(model.Q, model.Q.T)


def test_model_is_immutable(scalar_offset):
    with pytest.raises(ValueError):
        scalar_offset.A[0, 0] = 5.0


def test_non_finite_rejected():
    with pytest.raises(ModelError):
        scalar_model(A=float("nan"))
