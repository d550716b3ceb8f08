"""Model parameters, state containers and covariance assembly.

Unit conventions used throughout the package (no conversions inside the
numeric kernels):

* time in days,
* prices as basis-point offsets from an arbitrary reference mid,
* trade sizes and inventories in oz,
* intensities per day.

The spot price is an arithmetic Brownian offset starting at 0 by default;
absolute price levels never enter the controls.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ModelParams",
    "MarketState",
    "Inventory",
    "ParamError",
    "validate",
    "covariance_matrix",
    "correlation_matrix",
    "correlation_cholesky",
    "gold_params",
    "params_to_dict",
    "params_from_dict",
    "load_params",
    "dump_params",
]

# JSON field names, in serialization order.  "lambda" is a Python keyword,
# so the dataclass attribute is `lam`.
_JSON_FIELDS = (
    "sigma_S", "k_E", "sigma_E", "k_D", "sigma_D", "D_bar", "rho",
    "ladder", "lambda", "alpha", "beta",
    "psi_S", "psi_F", "eta_S", "eta_F",
    "gamma", "K_S", "K_F", "T",
)


class ParamError(ValueError):
    """Raised when a parameter set violates a model invariant."""


@dataclass(frozen=True)
class ModelParams:
    """Every model constant, with units.

    Attributes:
        sigma_S: spot volatility, bp/sqrt(day).
        k_E: EFP relaxation rate, 1/day.
        sigma_E: EFP volatility, bp/sqrt(day).
        k_D: mean-level relaxation rate, 1/day.
        sigma_D: mean-level volatility, bp/sqrt(day).
        D_bar: long-run EFP mean, bp.
        rho: spot-EFP Brownian correlation in (-1, 1).
        ladder: ordered client trade sizes, oz.
        lam: per-size base trade intensities, 1/day (JSON key "lambda").
        alpha, beta: logistic fill-function parameters (dimensionless, 1/bp).
        psi_S, psi_F: linear execution cost coefficients, bp.
        eta_S, eta_F: quadratic execution cost coefficients, bp*day/oz.
        gamma: CARA risk aversion, 1/(bp*oz).
        K_S, K_F: terminal inventory penalty coefficients, bp/oz.
        T: horizon, day.
    """

    sigma_S: float
    k_E: float
    sigma_E: float
    k_D: float
    sigma_D: float
    D_bar: float
    rho: float
    ladder: tuple[float, ...]
    lam: tuple[float, ...]
    alpha: float
    beta: float
    psi_S: float
    psi_F: float
    eta_S: float
    eta_F: float
    gamma: float
    K_S: float
    K_F: float
    T: float

    def replace(self, **changes) -> "ModelParams":
        """Return a copy with the given fields replaced (and re-validated)."""
        return validate(replace(self, **changes))


@dataclass(frozen=True)
class MarketState:
    """Continuous price state (t, S, E, D); D may be true or filtered."""

    t: float
    S: float = 0.0
    E: float = 0.0
    D: float = 0.0


@dataclass(frozen=True)
class Inventory:
    """Dealer positions: spot q_S (oz), futures q_F (oz), cash X (bp*oz)."""

    q_S: float = 0.0
    q_F: float = 0.0
    X: float = 0.0

    def mark_to_market(self, state: MarketState) -> float:
        """X + q_S*S + q_F*(S+E), bp*oz."""
        return self.X + self.q_S * state.S + self.q_F * (state.S + state.E)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParamError(msg)


def validate(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged iff every model invariant holds.

    Raises:
        ParamError: naming the offending field.
    """
    p = params
    _require(p.sigma_S > 0, "sigma_S must be positive")
    _require(p.sigma_E > 0, "sigma_E must be positive")
    _require(p.k_E > 0, "k_E must be positive")
    _require(p.k_D >= 0, "k_D must be nonnegative")
    _require(p.sigma_D >= 0, "sigma_D must be nonnegative")
    _require(math.isfinite(p.D_bar), "D_bar must be finite")
    _require(-1.0 < p.rho < 1.0, "rho must lie in (-1,1)")
    _require(math.isfinite(p.alpha), "alpha must be finite")
    _require(p.beta > 0, "beta must be positive")
    _require(p.gamma > 0, "gamma must be positive")
    _require(p.eta_S > 0, "eta_S must be positive")
    _require(p.eta_F > 0, "eta_F must be positive")
    _require(p.psi_S >= 0, "psi_S must be nonnegative")
    _require(p.psi_F >= 0, "psi_F must be nonnegative")
    _require(p.K_S >= 0, "K_S must be nonnegative")
    _require(p.K_F >= 0, "K_F must be nonnegative")
    _require(p.T > 0, "T must be positive")
    _require(len(p.ladder) > 0, "ladder must be nonempty")
    _require(len(p.lam) == len(p.ladder),
             "lambda must have one intensity per ladder size")
    _require(all(z > 0 for z in p.ladder), "ladder sizes must be positive")
    _require(all(b > a for a, b in zip(p.ladder, p.ladder[1:])),
             "ladder must be strictly increasing")
    _require(all(v > 0 for v in p.lam), "lambda intensities must be positive")
    return params


def correlation_matrix(params: ModelParams) -> np.ndarray:
    """The 3x3 Brownian correlation R: only spot-EFP correlation rho.

    The filter formulas assume this structure (R13 = R23 = 0); a general R
    is deliberately not supported.
    """
    r = params.rho
    return np.array([[1.0, r, 0.0], [r, 1.0, 0.0], [0.0, 0.0, 1.0]])


def covariance_matrix(params: ModelParams) -> np.ndarray:
    """Sigma = diag(sigma_S, sigma_E, sigma_D) R diag(...), bp^2/day.

    Positive semi-definite by construction; rank 2 when sigma_D = 0.
    The trailing 2x2 submatrix (Sigma with the first row and column
    removed) is ``covariance_matrix(p)[1:, 1:]``.
    """
    validate(params)
    d = np.diag([params.sigma_S, params.sigma_E, params.sigma_D])
    return d @ correlation_matrix(params) @ d


def correlation_cholesky(corr: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L L^T = corr for the supported forms.

    Handles the rank-2 cases (sigma_D = 0 row, or the filtered structure
    where the third driver is a combination of the first two) that a plain
    Cholesky would reject.
    """
    rho = corr[0, 1]
    c = math.sqrt(max(0.0, 1.0 - rho * rho))
    l31 = corr[0, 2]
    l32 = (corr[1, 2] - rho * l31) / c if c > 0 else 0.0
    l33sq = 1.0 - l31 * l31 - l32 * l32
    l33 = math.sqrt(l33sq) if l33sq > 1e-14 else 0.0
    return np.array([[1.0, 0.0, 0.0], [rho, c, 0.0], [l31, l32, l33]])


def gold_params(
    gamma: float = 3e-4,
    *,
    k_D: float = 0.0,
    sigma_D: float = 0.0,
    D_bar: float = 0.0,
    rho: float = 0.0,
    K_S: float = 0.0,
    K_F: float = 0.0,
    T: float = 1.0 / 24.0,
) -> ModelParams:
    """Representative institutional XAUUSD dealer parameter set.

    Spot vol 140 bp/sqrt(day), EFP vol 5 bp/sqrt(day) relaxing at 8/day,
    a six-size pricing ladder from 100 to 5000 oz, logistic fill
    sensitivity (alpha=-0.8, beta=5/bp), and spot/futures execution costs
    reflecting the liquidity difference between the two venues.  Daily
    client turnover in this setup is roughly $1B.
    """
    return validate(ModelParams(
        sigma_S=140.0,
        k_E=8.0,
        sigma_E=5.0,
        k_D=k_D,
        sigma_D=sigma_D,
        D_bar=D_bar,
        rho=rho,
        ladder=(100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0),
        lam=(1600.0, 600.0, 1000.0, 600.0, 120.0, 80.0),
        alpha=-0.8,
        beta=5.0,
        psi_S=0.4,
        psi_F=0.2,
        eta_S=7e-8,
        eta_F=3e-8,
        gamma=gamma,
        K_S=K_S,
        K_F=K_F,
        T=T,
    ))


def params_to_dict(params: ModelParams) -> dict:
    """Flat JSON-ready mapping with the canonical field names."""
    d = {
        "sigma_S": params.sigma_S, "k_E": params.k_E, "sigma_E": params.sigma_E,
        "k_D": params.k_D, "sigma_D": params.sigma_D, "D_bar": params.D_bar,
        "rho": params.rho,
        "ladder": list(params.ladder), "lambda": list(params.lam),
        "alpha": params.alpha, "beta": params.beta,
        "psi_S": params.psi_S, "psi_F": params.psi_F,
        "eta_S": params.eta_S, "eta_F": params.eta_F,
        "gamma": params.gamma, "K_S": params.K_S, "K_F": params.K_F,
        "T": params.T,
    }
    return {k: d[k] for k in _JSON_FIELDS}


def params_from_dict(d: dict) -> ModelParams:
    """Parse and validate a flat JSON object.

    Unknown keys are an error: they are almost always typos in experiment
    configs and silently ignoring them would change the experiment.
    """
    unknown = sorted(set(d) - set(_JSON_FIELDS))
    if unknown:
        raise ParamError(f"unknown parameter fields: {', '.join(unknown)}")
    missing = [k for k in _JSON_FIELDS if k not in d]
    if missing:
        raise ParamError(f"missing parameter fields: {', '.join(missing)}")
    return validate(ModelParams(
        sigma_S=float(d["sigma_S"]), k_E=float(d["k_E"]),
        sigma_E=float(d["sigma_E"]), k_D=float(d["k_D"]),
        sigma_D=float(d["sigma_D"]), D_bar=float(d["D_bar"]),
        rho=float(d["rho"]),
        ladder=tuple(float(z) for z in d["ladder"]),
        lam=tuple(float(v) for v in d["lambda"]),
        alpha=float(d["alpha"]), beta=float(d["beta"]),
        psi_S=float(d["psi_S"]), psi_F=float(d["psi_F"]),
        eta_S=float(d["eta_S"]), eta_F=float(d["eta_F"]),
        gamma=float(d["gamma"]), K_S=float(d["K_S"]), K_F=float(d["K_F"]),
        T=float(d["T"]),
    ))


def load_params(path: str | Path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))


def dump_params(params: ModelParams, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh, indent=2)
        fh.write("\n")
