import math

import numpy as np
import pytest

import efpmm
from efpmm import filtering as fl
from efpmm.filtering import (
    CalibrationError,
    FilterState,
    asymptotic_variance,
    calibrate_efp,
    calibration_bootstrap_se,
    effective_correlation,
    effective_covariance,
    effective_sigma_d,
    empirical_autocovariance,
    filter_step,
    run_filter,
    stationary_autocovariance,
    variance_ode_rhs,
    variance_ode_step,
)
from efpmm.sim import simulate_efp_exact

NESTED = dict(k_D=0.2, sigma_D=2.0)
DT = 1.0 / 86400.0


@pytest.fixture(scope="module")
def nested():
    return efpmm.gold_params(**NESTED)


def test_variance_ode_degenerate_zero(gold):
    assert variance_ode_step(0.0, gold, 1e-3) == 0.0  # sigma_D = 0


def test_variance_fixed_point(nested):
    nu_inf = asymptotic_variance(nested)
    assert abs(variance_ode_rhs(nu_inf, nested)) < 1e-12


def test_variance_ode_converges_to_asymptote(nested):
    nu = 0.0
    for _ in range(1_500_000):
        nu = variance_ode_step(nu, nested, 1e-5)
    assert abs(nu - asymptotic_variance(nested)) < 1e-8


def test_variance_monotone_convergence(nested):
    nu_inf = asymptotic_variance(nested)
    hi = nu_inf + nested.sigma_D ** 2 / (2 * nested.k_D + 1)
    for start in (0.0, 0.5 * nu_inf, nu_inf, hi):
        nu, gap = start, abs(start - nu_inf)
        for _ in range(20000):
            nu = variance_ode_step(nu, nested, 1e-4)
            new_gap = abs(nu - nu_inf)
            assert new_gap <= gap + 1e-15
            gap = new_gap


def test_asymptotic_variance_examples(gold):
    assert asymptotic_variance(gold) == 0.0  # sigma_D = 0
    p = gold.replace(k_D=0.0, sigma_D=5.0)
    assert asymptotic_variance(p) == pytest.approx(3.125, rel=1e-14)
    vals = [asymptotic_variance(gold.replace(k_D=0.2, sigma_D=s))
            for s in (0.5, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(vals) > 0)


def test_effective_sigma_d(nested, gold):
    assert effective_sigma_d(gold) == 0.0
    p = gold.replace(k_D=0.0, sigma_D=2.0)
    assert effective_sigma_d(p) == pytest.approx(2.0, rel=1e-14)
    # the two closed forms agree
    lhs = effective_sigma_d(nested)
    rhs = nested.k_E / (nested.sigma_E * math.sqrt(1 - nested.rho ** 2)) \
        * asymptotic_variance(nested)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_effective_correlation_rank2(nested):
    p = nested.replace(rho=0.4)
    R = effective_correlation(p)
    assert np.allclose(np.diag(R), 1.0)
    assert R[1, 2] == pytest.approx(math.sqrt(1 - 0.16), rel=1e-14)
    evals = np.linalg.eigvalsh(R)
    assert evals[0] == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.matrix_rank(R, tol=1e-10) == 2
    sig = effective_covariance(p)
    assert np.allclose(sig, sig.T)


def test_filter_step_zero_innovation(nested):
    fs = FilterState(d_hat=1.5, nu2=asymptotic_variance(nested))
    dt = DT
    E = 3.0
    dE = -nested.k_E * (E - fs.d_hat) * dt   # exactly kills the innovation
    out = filter_step(fs, 0.0, dE, E, dt, nested)
    drift_only = fs.d_hat - nested.k_D * (fs.d_hat - nested.D_bar) * dt
    assert out.d_hat == pytest.approx(drift_only, rel=1e-14)
    assert out.nu2 == fs.nu2


def test_filter_step_linear_in_innovations(nested):
    fs = FilterState(d_hat=0.0, nu2=asymptotic_variance(nested))
    base = filter_step(fs, 0.0, 0.0, 0.0, DT, nested).d_hat
    a = filter_step(fs, 0.02, 0.005, 0.0, DT, nested).d_hat - base
    b = filter_step(fs, 0.04, 0.01, 0.0, DT, nested).d_hat - base
    assert b == pytest.approx(2 * a, rel=1e-10)


def test_filter_step_variance_modes(nested):
    fs = FilterState(d_hat=0.0, nu2=0.5)
    held = filter_step(fs, 0.0, 0.0, 0.0, DT, nested)
    assert held.nu2 == 0.5
    evolved = filter_step(fs, 0.0, 0.0, 0.0, DT, nested, hold_variance=False)
    assert evolved.nu2 == variance_ode_step(0.5, nested, DT)


def test_run_filter_matches_scalar_steps(nested):
    rng = np.random.default_rng(0)
    n = 500
    dS = rng.normal(0, 0.1, n)
    dE = rng.normal(0, 0.05, n)
    E = np.cumsum(dE) - dE
    out = run_filter(dS, dE, E, DT, nested, d0=0.3)
    fs = FilterState(d_hat=0.3, nu2=asymptotic_variance(nested))
    for k in range(n):
        fs = filter_step(fs, dS[k], dE[k], E[k], DT, nested)
        assert out[k + 1] == pytest.approx(fs.d_hat, rel=1e-12, abs=1e-12)


def test_filter_tracks_deterministic_mean(gold):
    # sigma_D = 0 and matching start: estimate follows D up to O(dt) drift bias
    p = gold.replace(k_D=0.5, sigma_D=0.0, D_bar=2.0)
    n = 5000
    S, E, D = simulate_efp_exact(p, n, DT, seed=1,
                                 x0=efpmm.MarketState(t=0, E=1.0, D=-1.0))
    dhat = run_filter(np.diff(S), np.diff(E), E[:-1], DT, p, d0=D[0], nu2=0.0)
    assert np.max(np.abs(dhat - D)) < 1e-4


def test_filter_mse_short_run(nested):
    n = 5 * 86400
    S, E, D = simulate_efp_exact(nested, n, DT, seed=2)
    dhat = run_filter(np.diff(S), np.diff(E), E[:-1], DT, nested, d0=D[0])
    mse = float(np.mean((dhat[86400:] - D[86400:]) ** 2))
    assert mse < 2.0 * asymptotic_variance(nested)


def test_autocovariance_degenerate_plain_ou(gold):
    h = np.array([0.0, 0.05, 0.2])
    got = stationary_autocovariance(h, gold)
    want = gold.sigma_E ** 2 / (2 * gold.k_E) * np.exp(-gold.k_E * h)
    assert np.allclose(got, want, rtol=1e-14)


def test_autocovariance_symmetry(nested):
    assert stationary_autocovariance(0.07, nested) == \
        stationary_autocovariance(-0.07, nested)


def test_autocovariance_invalid_cases(gold):
    with pytest.raises(ValueError, match="resonant"):
        stationary_autocovariance(0.1, gold.replace(k_D=8.0, sigma_D=1.0))
    with pytest.raises(ValueError, match="k_D"):
        stationary_autocovariance(0.1, gold.replace(k_D=0.0, sigma_D=1.0))


def test_autocovariance_validated_against_simulation():
    # fast slow-mode so a few hundred days pin the variance well
    p = efpmm.gold_params(k_D=2.0, sigma_D=2.0)
    S, E, D = simulate_efp_exact(p, 400 * 86400, DT, seed=9)
    e = E[10 * 86400:]
    lags = np.array([0, 60, 600, 3600, 14400])
    emp = empirical_autocovariance(e, lags)
    mod = stationary_autocovariance(lags * DT, p)
    assert np.all(np.abs(emp - mod) <= 0.05 * mod)


def test_empirical_autocovariance_basics():
    x = np.array([1.0, -1.0] * 500)
    got = empirical_autocovariance(x, np.array([0, 1]))
    assert got[0] == pytest.approx(1.0, rel=1e-12)
    assert got[1] == pytest.approx(-1.0, rel=1e-3)
    with pytest.raises(ValueError, match="lag"):
        empirical_autocovariance(x, np.array([2000]))


def test_calibration_recovers_fast_rate(nested):
    init = nested.replace(k_E=4.0, sigma_E=3.0, k_D=0.5, sigma_D=1.0)
    S, E, D = simulate_efp_exact(nested, 30 * 86400, DT, seed=100)
    res = calibrate_efp(E, DT, init)
    assert abs(res.k_E - nested.k_E) / nested.k_E < 0.2
    assert abs(res.sigma_E - nested.sigma_E) / nested.sigma_E < 0.1
    assert abs(res.D_bar) < 3.0


def test_calibration_degenerate_inputs(nested):
    with pytest.raises(CalibrationError, match="too short"):
        calibrate_efp(np.zeros(100), DT, nested)
    with pytest.raises(CalibrationError, match="constant"):
        calibrate_efp(np.ones(20000), DT, nested)
    with pytest.raises(CalibrationError, match="spacing"):
        calibrate_efp(np.random.default_rng(0).normal(size=20000), -1.0, nested)


def test_calibration_flags_zero_sigma_d(nested):
    p0 = efpmm.gold_params(k_D=0.2, sigma_D=0.0)
    init = nested.replace(k_E=4.0, sigma_E=3.0, k_D=0.5, sigma_D=1.0)
    S, E, D = simulate_efp_exact(p0, 30 * 86400, DT, seed=55)
    res = calibrate_efp(E, DT, init)
    lags = np.array([0, 30, 120, 600, 1800, 3600, 7200])
    se = calibration_bootstrap_se(E, DT, res, lags, block_len=86400 // 4,
                                  n_boot=12, seed=1)
    assert res.sigma_D <= 2.0 * se["sigma_D"]
    assert res.sigma_D < 0.05 * res.sigma_E


def test_bootstrap_guards():
    x = np.random.default_rng(0).normal(size=5000)
    point = fl.CalibrationResult(8.0, 5.0, 0.2, 1.0, 0.0, 0.0, 10)
    with pytest.raises(ValueError, match="block_len"):
        calibration_bootstrap_se(x, DT, point, np.array([0, 500]), block_len=600)
    with pytest.raises(ValueError, match="blocks"):
        calibration_bootstrap_se(x, DT, point, np.array([0, 10]), block_len=2000)
