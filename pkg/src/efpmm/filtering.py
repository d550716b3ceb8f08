"""Bayesian filtering of the unobserved EFP mean level.

The mean level D of the EFP is not observable.  Conditioning on the
observed spot/EFP path, its conditional mean D_hat follows

    dD_hat = -k_D*(D_hat - D_bar)*dt + (k_E/(sigma_E*sqrt(1-rho^2))) * nu2 * dW_D

driven by the innovation dW_D = (dW_E - rho*dW_S)/sqrt(1-rho^2), with
dW_S = dS/sigma_S and dW_E = (dE + k_E*(E - D_hat)*dt)/sigma_E.  The
conditional variance nu2 is deterministic and solves the scalar Riccati
ODE

    d(nu2)/dt = -(k_E^2/((1-rho^2)*sigma_E^2))*nu2^2 - 2*k_D*nu2 + sigma_D^2,

whose fixed point nu2_inf has a closed form.  Running the filter at the
stationary gain, the control problem is unchanged up to replacing sigma_D
by sigma_D_hat = (k_E/(sigma_E*sqrt(1-rho^2))) * nu2_inf and the Brownian
correlation by the rank-2 innovation structure R_hat.

``stationary_autocovariance`` gives the closed-form stationary
Cov(E_t, E_{t+h}) of the nested pair (a two-exponential mixture, derived
via the spectral density and validated against long simulated paths), and
``calibrate_efp`` moment-matches it to an observed EFP series with a
derivative-free simplex search.  This is a deliberately light stand-in
for exact Gaussian maximum likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .params import ModelParams, validate

__all__ = [
    "FilterState",
    "variance_ode_rhs",
    "variance_ode_step",
    "asymptotic_variance",
    "effective_sigma_d",
    "effective_correlation",
    "effective_covariance",
    "filter_gain",
    "filter_step",
    "run_filter",
    "stationary_autocovariance",
    "empirical_autocovariance",
    "CalibrationResult",
    "CalibrationError",
    "calibrate_efp",
    "calibration_bootstrap_se",
]


@dataclass(frozen=True)
class FilterState:
    """Filtered mean level D_hat (bp) and conditional variance nu2 (bp^2)."""

    d_hat: float
    nu2: float


class CalibrationError(RuntimeError):
    pass


def variance_ode_rhs(nu2: float, params: ModelParams) -> float:
    c = 1.0 - params.rho ** 2
    k = params.k_E ** 2 / (c * params.sigma_E ** 2)
    return -k * nu2 * nu2 - 2.0 * params.k_D * nu2 + params.sigma_D ** 2


def variance_ode_step(nu2: float, params: ModelParams, dt: float) -> float:
    """One explicit Euler step of the conditional-variance ODE, floored at 0."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return max(0.0, nu2 + dt * variance_ode_rhs(nu2, params))


def asymptotic_variance(params: ModelParams) -> float:
    """Stationary conditional variance nu2_inf, bp^2."""
    c = 1.0 - params.rho ** 2
    s2 = params.sigma_D ** 2
    if s2 == 0.0:
        return 0.0
    k = params.k_E ** 2 / (c * params.sigma_E ** 2)
    return s2 / (params.k_D + math.sqrt(params.k_D ** 2 + k * s2))


def effective_sigma_d(params: ModelParams) -> float:
    """sigma_D_hat: mean-level volatility as seen through the filter."""
    if params.sigma_D == 0.0:
        return 0.0
    xi = params.k_E * params.sigma_D / (params.sigma_E * math.sqrt(1.0 - params.rho ** 2))
    return params.sigma_D * xi / (params.k_D + math.sqrt(params.k_D ** 2 + xi * xi))


def effective_correlation(params: ModelParams) -> np.ndarray:
    """Rank-2 innovation correlation R_hat (third driver spanned by the first two)."""
    r = params.rho
    c = math.sqrt(1.0 - r * r)
    return np.array([[1.0, r, 0.0], [r, 1.0, c], [0.0, c, 1.0]])


def effective_covariance(params: ModelParams) -> np.ndarray:
    """Covariance for the partial-information problem: sigma_D_hat and R_hat."""
    validate(params)
    d = np.diag([params.sigma_S, params.sigma_E, effective_sigma_d(params)])
    return d @ effective_correlation(params) @ d


def filter_gain(params: ModelParams, nu2: float) -> float:
    """Loading of D_hat on the innovation: k_E*nu2/(sigma_E*sqrt(1-rho^2))."""
    return params.k_E * nu2 / (params.sigma_E * math.sqrt(1.0 - params.rho ** 2))


def filter_step(
    fs: FilterState,
    dS: float,
    dE: float,
    E: float,
    dt: float,
    params: ModelParams,
    *,
    hold_variance: bool = True,
) -> FilterState:
    """Advance the filter one step from observed increments (dS, dE).

    ``E`` is the EFP level at the start of the step.  With
    ``hold_variance`` the gain stays at the current nu2 (stationary mode);
    otherwise nu2 takes an Euler step of its ODE.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = math.sqrt(1.0 - params.rho ** 2)
    dw_s = dS / params.sigma_S
    dw_e = (dE + params.k_E * (E - fs.d_hat) * dt) / params.sigma_E
    dw_d = (dw_e - params.rho * dw_s) / c
    d_hat = (fs.d_hat - params.k_D * (fs.d_hat - params.D_bar) * dt
             + filter_gain(params, fs.nu2) * dw_d)
    nu2 = fs.nu2 if hold_variance else variance_ode_step(fs.nu2, params, dt)
    return FilterState(d_hat=d_hat, nu2=nu2)


def run_filter(
    dS: np.ndarray,
    dE: np.ndarray,
    E: np.ndarray,
    dt: float,
    params: ModelParams,
    d0: float | None = None,
    nu2: float | None = None,
) -> np.ndarray:
    """Vectorized stationary-gain filter over recorded increments.

    ``E`` holds the pre-step EFP levels (same length as the increments).
    Returns the D_hat series of length len(dS)+1, starting from d0
    (default D_bar).  The recursion is linear time-invariant at fixed
    gain, so it runs through a single-pole IIR filter.
    """
    dS = np.asarray(dS, dtype=float)
    dE = np.asarray(dE, dtype=float)
    E = np.asarray(E, dtype=float)
    if not (len(dS) == len(dE) == len(E)):
        raise ValueError("dS, dE and E must have equal length")
    d0 = params.D_bar if d0 is None else d0
    nu2 = asymptotic_variance(params) if nu2 is None else nu2
    c = math.sqrt(1.0 - params.rho ** 2)
    g = filter_gain(params, nu2) / c
    phi = 1.0 - params.k_D * dt - g * params.k_E * dt / params.sigma_E
    u = (params.k_D * params.D_bar * dt
         + g * ((dE + params.k_E * E * dt) / params.sigma_E
                - params.rho * dS / params.sigma_S))
    y, _ = lfilter([1.0], [1.0, -phi], u, zi=np.array([phi * d0]))
    return np.concatenate(([d0], y))


def stationary_autocovariance(h, params: ModelParams):
    """Stationary Cov(E_t, E_{t+h}) of the nested pair, bp^2.

    Two-exponential mixture c_E*exp(-k_E|h|) + c_D*exp(-k_D|h|) with

        c_E = sigma_E^2/(2 k_E) - k_E sigma_D^2 / (2 (k_E^2 - k_D^2)),
        c_D = k_E^2 sigma_D^2 / (2 k_D (k_E^2 - k_D^2)),

    obtained by filtering the mean-level spectrum through the EFP
    relaxation (validated against empirical autocovariances of long
    simulated paths).  Degenerate sigma_D = 0 reduces to the plain OU
    autocovariance; the resonant case k_E = k_D is not supported.
    """
    h = np.abs(np.asarray(h, dtype=float))
    kE, kD = params.k_E, params.k_D
    if params.sigma_D == 0.0:
        return params.sigma_E ** 2 / (2.0 * kE) * np.exp(-kE * h)
    if kD <= 0.0:
        raise ValueError("k_D must be positive when sigma_D > 0")
    if kE == kD:
        raise ValueError("resonant case k_E = k_D is not supported")
    s2 = params.sigma_D ** 2
    c_e = params.sigma_E ** 2 / (2.0 * kE) - kE * s2 / (2.0 * (kE ** 2 - kD ** 2))
    c_d = kE ** 2 * s2 / (2.0 * kD * (kE ** 2 - kD ** 2))
    return c_e * np.exp(-kE * h) + c_d * np.exp(-kD * h)


def empirical_autocovariance(values: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """Sample autocovariance at integer lags (biased normalization)."""
    e = np.asarray(values, dtype=float)
    e = e - e.mean()
    n = len(e)
    out = np.empty(len(lags))
    for i, lag in enumerate(lags):
        if lag >= n:
            raise ValueError(f"lag {lag} exceeds series length {n}")
        out[i] = np.dot(e[: n - lag], e[lag:]) / (n - lag)
    return out


_DEFAULT_LAG_SECONDS = (0, 10, 30, 60, 180, 600, 1800, 3600, 7200,
                        14400, 28800, 86400, 172800, 345600)


def _default_lags(n: int, spacing_day: float) -> np.ndarray:
    lags = sorted({int(round(s / 86400.0 / spacing_day)) for s in _DEFAULT_LAG_SECONDS})
    return np.array([lag for lag in lags if lag < n // 4], dtype=np.int64)


@dataclass(frozen=True)
class CalibrationResult:
    k_E: float
    sigma_E: float
    k_D: float
    sigma_D: float
    D_bar: float
    objective: float
    n_iter: int


def _rate_ratio(theta1: float) -> float:
    # k_D/k_E in (0, 0.95]: the slow rate stays identified as the slow one
    return min(1.0 / (1.0 + math.exp(-theta1)), 0.95)


def _fit_autocov(emp: np.ndarray, lags_day: np.ndarray, sigma_e: float,
                 x0: np.ndarray, seed: int = 0):
    """Simplex fit of (k_E, k_D = r*k_E, sigma_D) at fixed sigma_E.

    theta = [log k_E, logit(k_D/k_E), sigma_D]; the ratio parameterization
    removes the label-switching valley at k_E = k_D.  Retries from
    jittered starts when the simplex stalls.
    """
    scale = emp[0] if emp[0] > 0 else 1.0

    def model(theta):
        k_e = math.exp(theta[0])
        r = _rate_ratio(theta[1])
        k_d, s_d = r * k_e, abs(theta[2])
        s2 = s_d * s_d
        denom = 2.0 * (k_e ** 2 - k_d ** 2)
        c_e = sigma_e ** 2 / (2.0 * k_e) - k_e * s2 / denom
        c_d = k_e ** 2 * s2 / (2.0 * k_d * denom) if s2 > 0 else 0.0
        return c_e * np.exp(-k_e * lags_day) + c_d * np.exp(-k_d * lags_day)

    def objective(theta):
        if not (-12.0 < theta[0] < 12.0):
            return 1e100
        m = model(theta)
        if not np.all(np.isfinite(m)):
            return 1e100
        return float(np.sum(((m - emp) / scale) ** 2))

    rng = np.random.default_rng(seed)
    best = None
    start = np.asarray(x0, dtype=float)
    for attempt in range(4):
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"maxiter": 4000, "maxfev": 6000,
                                "xatol": 1e-8, "fatol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
        if res.success:
            break
        start = np.asarray(x0, dtype=float) + rng.normal(scale=[0.7, 1.0, 0.3])
    return best


def calibrate_efp(
    values: np.ndarray,
    spacing_day: float,
    params_init: ModelParams,
    lags: np.ndarray | None = None,
) -> CalibrationResult:
    """Moment-match (k_E, sigma_E, k_D, sigma_D, D_bar) to an EFP series.

    ``values`` must be uniformly sampled at ``spacing_day``.  D_bar is the
    sample mean and sigma_E comes from the realized quadratic variation
    (the slow-mode contribution to one-step increments is negligible at
    intraday sampling); the mean-reversion rates and sigma_D then
    minimize the squared mismatch between the empirical autocovariance at
    the given integer ``lags`` (default: a geometric ladder) and the
    closed form, via Nelder-Mead simplex.  Fitting all four parameters on
    autocovariances alone is badly conditioned whenever the slow mode
    carries most of the variance, which is why sigma_E is pinned first.

    Raises:
        CalibrationError: on degenerate input or simplex non-convergence.
    """
    e = np.asarray(values, dtype=float)
    if len(e) < 10_000:
        raise CalibrationError(f"series too short ({len(e)} < 10000 samples)")
    if spacing_day <= 0:
        raise CalibrationError("sample spacing must be positive")
    d_bar = float(e.mean())
    if float(e.std()) == 0.0:
        raise CalibrationError("constant series: volatility is not identifiable")
    sigma_e = math.sqrt(float(np.mean(np.diff(e) ** 2)) / spacing_day)
    if sigma_e == 0.0:
        raise CalibrationError("flat increments: volatility is not identifiable")
    lag_idx = _default_lags(len(e), spacing_day) if lags is None \
        else np.asarray(lags, dtype=np.int64)
    emp = empirical_autocovariance(e, lag_idx)
    x0 = _initial_theta(emp, lag_idx * spacing_day, params_init)
    res = _fit_autocov(emp, lag_idx * spacing_day, sigma_e, x0)
    if not res.success:
        raise CalibrationError(
            f"simplex did not converge: {res.message}; "
            f"final simplex {res.final_simplex[0].tolist()} "
            f"values {res.final_simplex[1].tolist()}")
    th = res.x
    k_e = math.exp(th[0])
    return CalibrationResult(
        k_E=k_e, sigma_E=sigma_e,
        k_D=_rate_ratio(th[1]) * k_e, sigma_D=abs(th[2]),
        D_bar=d_bar, objective=float(res.fun), n_iter=int(res.nit))


def _initial_theta(emp: np.ndarray, lags_day: np.ndarray,
                   params_init: ModelParams) -> np.ndarray:
    """Data-driven simplex start: fast rate from the short-lag decay ratio.

    Over two short lags h and 2h the slow component is flat, so
    (C(0)-C(2h))/(C(0)-C(h)) = 1 + exp(-k_E h).
    """
    k_e = params_init.k_E
    short = np.nonzero(lags_day > 0)[0]
    if len(short) >= 2 and emp[0] > 0:
        i = short[0]
        h = lags_day[i]
        j = int(np.argmin(np.abs(lags_day - 2.0 * h)))
        d1, d2 = emp[0] - emp[i], emp[0] - emp[j]
        if d1 > 0 and d2 > d1 and abs(lags_day[j] - 2.0 * h) < 0.5 * h:
            ratio = d2 / d1 - 1.0
            if 0.0 < ratio < 1.0:
                k_e = -math.log(ratio) / h
    k_d = params_init.k_D if params_init.k_D > 0 else 0.1 * k_e
    r = min(max(k_d / k_e, 1e-4), 0.9)
    s_d = params_init.sigma_D if params_init.sigma_D > 0 else 0.5
    return np.array([math.log(k_e), math.log(r / (1.0 - r)), s_d])


def calibration_bootstrap_se(
    values: np.ndarray,
    spacing_day: float,
    point: CalibrationResult,
    lags: np.ndarray,
    block_len: int,
    n_boot: int = 20,
    seed: int = 0,
) -> dict[str, float]:
    """Block-bootstrap standard errors of the calibrated parameters.

    Splits the series into non-overlapping blocks of ``block_len``
    samples, computes within-block autocovariances and realized
    variances, resamples blocks with replacement, and refits each
    replicate starting from the point estimate.  Lags must not exceed
    block_len/3.
    """
    lag_idx = np.asarray(lags, dtype=np.int64)
    if lag_idx.max() > block_len // 3:
        raise ValueError("max lag must be at most block_len/3 for block bootstrap")
    e = np.asarray(values, dtype=float)
    n_blocks = len(e) // block_len
    if n_blocks < 4:
        raise ValueError("need at least 4 blocks")
    blocks = e[: n_blocks * block_len].reshape(n_blocks, block_len)
    per_block = np.stack([empirical_autocovariance(b, lag_idx) for b in blocks])
    per_block_qv = np.array([float(np.mean(np.diff(b) ** 2)) for b in blocks])
    rng = np.random.default_rng(seed)
    r0 = min(max(point.k_D / point.k_E, 1e-4), 0.9)
    # start sigma_D away from a collapsed point estimate so replicates
    # re-explore it and the spread reflects genuine data noise
    x0 = np.array([math.log(point.k_E), math.log(r0 / (1.0 - r0)),
                   max(point.sigma_D, 0.1)])
    draws = {"k_E": [], "sigma_E": [], "k_D": [], "sigma_D": []}
    for rep in range(n_boot):
        pick = rng.integers(0, n_blocks, size=n_blocks)
        emp = per_block[pick].mean(axis=0)
        sigma_e = math.sqrt(float(per_block_qv[pick].mean()) / spacing_day)
        res = _fit_autocov(emp, lag_idx * spacing_day, sigma_e, x0, seed=rep)
        th = res.x
        k_e = math.exp(th[0])
        draws["k_E"].append(k_e)
        draws["sigma_E"].append(sigma_e)
        draws["k_D"].append(_rate_ratio(th[1]) * k_e)
        draws["sigma_D"].append(abs(th[2]))
    return {k: float(np.std(v, ddof=1)) for k, v in draws.items()}
