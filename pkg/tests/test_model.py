import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdnioc import (ConfigError, CostModel, ExperimenterObservationModel, fingerprint,
                    load_model, random_problem, reaching_model, save_model, validate_model)
from sdnioc.model import model_from_dict, model_to_dict, symmetrize

from conftest import random_lqg


def test_reaching_model_validates():
    model, cost, _ = reaching_model()
    report = validate_model(model, cost)
    assert report.ok, report.errors
    assert model.m == 5


def test_zero_R_fails():
    model, cost, _ = reaching_model()
    bad = CostModel(cost.Q, np.zeros_like(cost.R), T=cost.T)
    report = validate_model(model, bad)
    assert not report.ok
    assert any("R not positive definite" in e for e in report.errors)


def test_wrong_shape_A_fails():
    model, cost, _ = reaching_model()
    bad = model.replace(A=np.ones((4, 5)))
    report = validate_model(bad, cost)
    assert not report.ok
    assert any("shape mismatch" in e for e in report.errors)


def test_non_psd_initial_cov_fails():
    model, cost, _ = reaching_model()
    bad = model.replace(x1_cov=-np.eye(5))
    assert not validate_model(bad, cost).ok


def test_round_trip_random_problem(tmp_path):
    model, cost, _ = random_problem()
    path = tmp_path / "m.json"
    save_model(path, model, cost)
    m2, c2, e2 = load_model(path)
    assert e2 is None
    for name in ("A", "B", "H", "V", "W", "E", "C", "D", "x1_mean", "x1_cov"):
        np.testing.assert_array_equal(getattr(m2, name), getattr(model, name))
    np.testing.assert_array_equal(c2.Q, cost.Q)
    np.testing.assert_array_equal(c2.R, cost.R)
    assert fingerprint(m2, c2) == fingerprint(model, cost)


def test_missing_field_named(tmp_path):
    model, cost, _ = random_problem()
    d = model_to_dict(model, cost)
    del d["A"]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="'A'") as info:
        load_model(path)
    assert info.value.field == "A"


def test_scalar_promotion():
    d = {"m": 1, "p": 1, "k": 1, "T": 3, "A": 0.9, "B": 1, "H": 1, "V": 0.1, "W": 0.1,
         "E": 0, "x1_mean": 0, "x1_cov": 0, "xhat1_mean": 0, "xhat1_cov": 0, "Q": 1, "R": 1}
    model, cost, _ = model_from_dict(d)
    np.testing.assert_array_equal(model.A[0], [[0.9]])
    assert model.A.shape == (3, 1, 1)
    assert not model.signal_dependent


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"m": 1,\n "p": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_model(path)


def test_bad_field_shape_named():
    model, cost, _ = random_problem()
    d = model_to_dict(model, cost)
    d["H"] = [[1.0, 2.0]]
    with pytest.raises(ConfigError, match="'H'"):
        model_from_dict(d)


def test_experimenter_model_round_trip(tmp_path):
    model, cost, _ = reaching_model()
    exp = ExperimenterObservationModel(np.eye(5)[:1], [[0.01]])
    save_model(tmp_path / "m.json", model, cost, exp)
    _, _, e2 = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(e2.M, exp.M)
    np.testing.assert_array_equal(e2.N, exp.N)


def test_empty_noise_lists_validate_like_plain(rng):
    model, cost = random_lqg(rng, signal=False)
    assert validate_model(model, cost).ok == validate_model(model.without_signal_noise(), cost).ok


def test_symmetrize_idempotent(rng):
    Q = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(symmetrize(Q), symmetrize(symmetrize(Q)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), signal=st.booleans())
def test_save_load_property(tmp_path_factory, seed, signal):
    model, cost = random_lqg(np.random.default_rng(seed), signal=signal)
    path = tmp_path_factory.mktemp("rt") / "m.json"
    save_model(path, model, cost)
    m2, c2, _ = load_model(path)
    assert model_to_dict(m2, c2) == model_to_dict(model, cost)
