import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import efpmm
from efpmm.params import (
    Inventory,
    MarketState,
    ParamError,
    correlation_cholesky,
    correlation_matrix,
    covariance_matrix,
    dump_params,
    load_params,
    params_from_dict,
    params_to_dict,
    validate,
)


def test_gold_parameter_set_accepted(gold):
    assert validate(gold) is gold
    assert gold.ladder == (100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0)
    assert gold.lam == (1600.0, 600.0, 1000.0, 600.0, 120.0, 80.0)


def test_validate_is_idempotent(gold):
    assert validate(validate(gold)) is gold


@pytest.mark.parametrize("field,value,msg", [
    ("beta", 0.0, "beta must be positive"),
    ("rho", 1.0, "rho must lie in"),
    ("rho", -1.0, "rho must lie in"),
    ("sigma_S", 0.0, "sigma_S must be positive"),
    ("sigma_E", -1.0, "sigma_E must be positive"),
    ("k_E", 0.0, "k_E must be positive"),
    ("k_D", -0.1, "k_D must be nonnegative"),
    ("sigma_D", -1.0, "sigma_D must be nonnegative"),
    ("gamma", 0.0, "gamma must be positive"),
    ("eta_S", 0.0, "eta_S must be positive"),
    ("eta_F", 0.0, "eta_F must be positive"),
    ("psi_S", -0.1, "psi_S must be nonnegative"),
    ("psi_F", -0.1, "psi_F must be nonnegative"),
    ("K_S", -1.0, "K_S must be nonnegative"),
    ("K_F", -1.0, "K_F must be nonnegative"),
    ("T", 0.0, "T must be positive"),
])
def test_validation_messages(gold, field, value, msg):
    with pytest.raises(ParamError, match=msg):
        gold.replace(**{field: value})


@pytest.mark.parametrize("ladder,lam,msg", [
    ((), (), "nonempty"),
    ((100.0, 100.0), (1.0, 1.0), "strictly increasing"),
    ((200.0, 100.0), (1.0, 1.0), "strictly increasing"),
    ((-100.0, 100.0), (1.0, 1.0), "positive"),
    ((100.0, 200.0), (1.0,), "one intensity per ladder size"),
    ((100.0, 200.0), (1.0, 0.0), "intensities must be positive"),
])
def test_ladder_validation(gold, ladder, lam, msg):
    with pytest.raises(ParamError, match=msg):
        gold.replace(ladder=ladder, lam=lam)


def test_covariance_gold_diagonal(gold):
    # sigma_S=140, sigma_E=5, sigma_D=0, rho=0
    assert np.array_equal(covariance_matrix(gold),
                          np.diag([19600.0, 25.0, 0.0]))


def test_covariance_unit_identity(gold):
    p = gold.replace(sigma_S=1.0, sigma_E=1.0, sigma_D=1.0, k_D=1.0)
    assert np.array_equal(covariance_matrix(p), np.eye(3))


def test_covariance_offdiagonal(gold):
    p = gold.replace(rho=0.5)
    sig = covariance_matrix(p)
    # rho * sigma_S * sigma_E = 0.5 * 140 * 5
    assert sig[0, 1] == pytest.approx(350.0, abs=1e-12)
    assert sig[1, 0] == sig[0, 1]


def test_sigma_tilde_is_trailing_submatrix(gold):
    p = gold.replace(sigma_D=2.0, k_D=0.2, rho=0.3)
    sig = covariance_matrix(p)
    assert np.array_equal(sig[1:, 1:],
                          np.array([[25.0, 0.0], [0.0, 4.0]]))


@settings(max_examples=100, deadline=None)
@given(
    sig_s=st.floats(1e-3, 1e4),
    sig_e=st.floats(1e-3, 1e3),
    sig_d=st.floats(0.0, 1e3),
    rho=st.floats(-0.999, 0.999),
)
def test_covariance_psd_property(gold, sig_s, sig_e, sig_d, rho):
    p = gold.replace(sigma_S=sig_s, sigma_E=sig_e, sigma_D=sig_d,
                     k_D=0.1, rho=rho)
    sig = covariance_matrix(p)
    assert np.allclose(sig, sig.T)
    evals = np.linalg.eigvalsh(sig)
    assert evals.min() >= -1e-9 * max(evals.max(), 1.0)
    L = correlation_cholesky(correlation_matrix(p))
    assert np.allclose(L @ L.T, correlation_matrix(p), atol=1e-12)


def test_json_round_trip(gold, tmp_path):
    path = tmp_path / "params.json"
    dump_params(gold, path)
    again = load_params(path)
    assert again == gold
    # serialized with the canonical flat field names
    raw = json.loads(path.read_text())
    assert "lambda" in raw and "lam" not in raw


def test_unknown_json_key_rejected(gold):
    d = params_to_dict(gold)
    d["sigmaS"] = 1.0
    with pytest.raises(ParamError, match="unknown parameter fields: sigmaS"):
        params_from_dict(d)


def test_missing_json_key_rejected(gold):
    d = params_to_dict(gold)
    del d["beta"]
    with pytest.raises(ParamError, match="missing parameter fields: beta"):
        params_from_dict(d)


def test_mark_to_market():
    inv = Inventory(q_S=100.0, q_F=-50.0, X=1000.0)
    state = MarketState(t=0.0, S=2.0, E=3.0)
    assert inv.mark_to_market(state) == 1000.0 + 200.0 - 50.0 * 5.0
