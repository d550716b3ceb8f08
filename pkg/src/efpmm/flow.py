"""Client fill-probability machinery and the quote Hamiltonian.

A quote at offset delta (bp from mid) for size z fills with intensity
``lambda(z) * f(delta)`` where ``f(delta) = 1/(1 + exp(alpha + beta*delta))``.
The per-size quote Hamiltonian under CARA utility is

    H(z, p) = sup_delta f(delta) * (1 - exp(-gamma*z*(delta - p))) / (gamma*z)

with p the reservation-price shift for that trade.  The supremum is
attained at the unique root delta* > p of the first-order condition

    beta*(1 - f(delta))*(1 - E) = gamma*z*E,   E = exp(-gamma*z*(delta - p)),

which is strictly monotone in delta on (p, inf), and the optimal offset
satisfies the closed-form identity
``delta*(z, p) = f^{-1}(gamma*z*H(z,p) - dH/dp)`` with the envelope
derivative ``dH/dp = -f(delta*) * E``.

``fit_quadratic`` Taylor-fits H(z0, .) at p = 0 to second order; the
resulting convex parabola is what the Riccati system consumes.  The
policy itself always uses the exact H machinery.

``OffsetTable``/``FillTable`` are cubic-spline tabulations of
delta*(z, .) and f(.) on uniform grids.  The Monte Carlo kernels evaluate
these polynomials instead of running a root-finder (or libm) per step,
which also keeps the compiled and pure-Python kernels bit-identical.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import expit, logit

__all__ = [
    "QUOTE_FLOOR",
    "QuadHamiltonian",
    "QuoteSolverError",
    "fill_probability",
    "inverse_fill",
    "quote_hamiltonian",
    "quote_hamiltonian_dp",
    "optimal_offset",
    "fit_quadratic",
    "OffsetTable",
    "FillTable",
    "eval_cubic",
]

# Quotes are admissible when bounded from below; anything past this floor
# signals mis-scaled parameters rather than a meaningful price.
QUOTE_FLOOR = -100.0  # bp


class QuoteSolverError(RuntimeError):
    """Offset root-finding failed to converge for the given (z, p)."""

    def __init__(self, z: float, p: float, detail: str = ""):
        self.z = z
        self.p = p
        super().__init__(f"quote offset solver failed at z={z}, p={p} {detail}")


@dataclass(frozen=True)
class QuadHamiltonian:
    """Convex quadratic a0 + a1*p + a2*p^2/2 approximating H(fit_size, p)."""

    a0: float
    a1: float
    a2: float
    fit_size: float

    def __post_init__(self):
        if self.a2 <= 0:
            raise ValueError(
                f"quadratic Hamiltonian curvature a2={self.a2} must be positive "
                "(pathological intensity parameters)")

    def __call__(self, p):
        return self.a0 + self.a1 * p + 0.5 * self.a2 * p * p


def fill_probability(delta, params):
    """f(delta) = 1/(1 + exp(alpha + beta*delta)); strictly decreasing."""
    return expit(-(params.alpha + params.beta * np.asarray(delta, dtype=float)))


def inverse_fill(y, params):
    """f^{-1}(y) for y in (0,1), bp."""
    return (-logit(y) - params.alpha) / params.beta


def _foc(delta, z, p, gamma, alpha, beta):
    """Monotone-increasing FOC residual on (p, inf); root is the argmax."""
    f = expit(-(alpha + beta * delta))
    e = np.exp(-gamma * z * (delta - p))
    return beta * (1.0 - f) * (1.0 - e) - gamma * z * e


def _upper_bracket(z, p, gamma, alpha, beta):
    # Past the logistic tail, delta* ~ p + log(1 + gamma*z/beta)/(gamma*z).
    gz = gamma * z
    hi = max(-alpha / beta + 10.0 / beta, p + math.log1p(gz / beta) / gz + 10.0 / beta)
    for _ in range(80):
        if _foc(hi, z, p, gamma, alpha, beta) > 0.0:
            return hi
        hi = p + 2.0 * (hi - p) + 1.0
    raise QuoteSolverError(z, p, "(no upper bracket)")


def _golden_argmax(z, p, gamma, alpha, beta, lo, hi, iters=200):
    """Golden-section maximization of the quote payoff; root-finder fallback."""
    gz = gamma * z

    def payoff(d):
        return expit(-(alpha + beta * d)) * -math.expm1(-gz * (d - p)) / gz

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = payoff(c), payoff(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = payoff(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = payoff(d)
    x = 0.5 * (a + b)
    if not math.isfinite(x):
        raise QuoteSolverError(z, p, "(golden-section diverged)")
    return x


def _solve_offset(z, p, params) -> float:
    """The unique FOC root delta* > p."""
    gamma, alpha, beta = params.gamma, params.alpha, params.beta
    if z <= 0:
        raise ValueError("size z must be positive")
    hi = _upper_bracket(z, p, gamma, alpha, beta)
    try:
        return brentq(_foc, p, hi, args=(z, p, gamma, alpha, beta),
                      xtol=1e-13, rtol=8.9e-16, maxiter=200)
    except (ValueError, RuntimeError):
        return _golden_argmax(z, p, gamma, alpha, beta, p, hi)


def quote_hamiltonian(z, p, params) -> float:
    """H(z, p), bp: value of the optimally priced size-z quote."""
    dstar = _solve_offset(z, p, params)
    gz = params.gamma * z
    f = float(expit(-(params.alpha + params.beta * dstar)))
    return f * -math.expm1(-gz * (dstar - p)) / gz


def quote_hamiltonian_dp(z, p, params) -> float:
    """Envelope derivative dH/dp = -f(delta*) * exp(-gamma*z*(delta*-p))."""
    dstar = _solve_offset(z, p, params)
    f = float(expit(-(params.alpha + params.beta * dstar)))
    return -f * math.exp(-params.gamma * z * (dstar - p))


def optimal_offset(z, p, params) -> float:
    """Optimal quote offset delta*(z, p), bp, floored at QUOTE_FLOOR.

    Returns the FOC argmax; the f^{-1}(gamma*z*H - dH/dp) characterization
    coincides with it (asserted in debug builds).
    """
    dstar = _solve_offset(z, p, params)
    if __debug__:
        # f^{-1} identity: gamma*z*H(z,p) - dH/dp equals f(delta*).
        gz = params.gamma * z
        f = float(expit(-(params.alpha + params.beta * dstar)))
        e = math.exp(-gz * (dstar - p))
        assert abs(f * -math.expm1(-gz * (dstar - p)) + f * e - f) < 1e-9
    if dstar < QUOTE_FLOOR:
        warnings.warn(
            f"quote offset {dstar:.2f} bp clamped at {QUOTE_FLOOR} bp "
            f"(z={z}, p={p}); check parameter scaling", RuntimeWarning)
        return QUOTE_FLOOR
    return dstar


def fit_quadratic(params, z0: float | None = None, method: str = "taylor") -> QuadHamiltonian:
    """Second-order Taylor fit of H(z0, .) at p = 0.

    z0 defaults to the smallest ladder size.  a1 uses the exact envelope
    derivative; a2 is a central difference of the envelope derivative at
    step 1e-5 bp.  ``method="lsq"`` (intensity-weighted least squares over
    a p-range) is reserved but not implemented.
    """
    if method == "lsq":
        raise NotImplementedError("weighted least-squares fit is not implemented")
    if method != "taylor":
        raise ValueError(f"unknown fit method {method!r}")
    if z0 is None:
        z0 = params.ladder[0]
    if z0 <= 0:
        raise ValueError("fit size z0 must be positive")
    h = 1e-5
    a0 = quote_hamiltonian(z0, 0.0, params)
    a1 = quote_hamiltonian_dp(z0, 0.0, params)
    a2 = (quote_hamiltonian_dp(z0, h, params)
          - quote_hamiltonian_dp(z0, -h, params)) / (2.0 * h)
    return QuadHamiltonian(a0=a0, a1=a1, a2=a2, fit_size=z0)


# ---------------------------------------------------------------------------
# Spline tables for the simulation kernels
# ---------------------------------------------------------------------------

def _spline_coeffs(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(n-1, 4) rows [c3, c2, c1, c0]: y = ((c3*d + c2)*d + c1)*d + c0."""
    cs = CubicSpline(x, y)
    return np.ascontiguousarray(cs.c.T)


def eval_cubic(x0: float, h: float, coeffs: np.ndarray, x):
    """Evaluate a uniform-grid cubic spline; clamps x to the grid range.

    Returns (values, clamped_count).  The arithmetic here must match the
    compiled kernel operation-for-operation.
    """
    x = np.asarray(x, dtype=float)
    n_int = coeffs.shape[0]
    hi = x0 + h * n_int
    xc = np.minimum(np.maximum(x, x0), hi)
    clamped = int(np.count_nonzero(xc != x))
    idx = np.minimum(((xc - x0) / h).astype(np.int64), n_int - 1)
    d = xc - (x0 + idx * h)
    c = coeffs[idx]
    val = ((c[..., 0] * d + c[..., 1]) * d + c[..., 2]) * d + c[..., 3]
    return val, clamped


def _solve_offset_grid(z: float, p_grid: np.ndarray, params) -> np.ndarray:
    """Vectorized bisection + Newton polish for delta*(z, p) on a p-grid."""
    gamma, alpha, beta = params.gamma, params.alpha, params.beta
    gz = gamma * z
    lo = p_grid.copy()
    hi = np.maximum(-alpha / beta + 10.0 / beta,
                    p_grid + math.log1p(gz / beta) / gz + 10.0 / beta)
    for _ in range(80):
        bad = _foc(hi, z, p_grid, gamma, alpha, beta) <= 0.0
        if not bad.any():
            break
        hi[bad] = p_grid[bad] + 2.0 * (hi[bad] - p_grid[bad]) + 1.0
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        neg = _foc(mid, z, p_grid, gamma, alpha, beta) < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    d = 0.5 * (lo + hi)
    for _ in range(3):  # Newton polish; FOC slope is strictly positive
        f = expit(-(alpha + beta * d))
        e = np.exp(-gz * (d - p_grid))
        phi = beta * (1.0 - f) * (1.0 - e) - gz * e
        dphi = (beta * beta * f * (1.0 - f) * (1.0 - e)
                + beta * (1.0 - f) * gz * e + gz * gz * e)
        step = phi / dphi
        d = np.clip(d - step, lo, hi)
    return d


@dataclass(frozen=True)
class OffsetTable:
    """Per-size cubic-spline tables of the optimal offset delta*(z, p)."""

    sizes: np.ndarray          # (n_sizes,)
    p0: float
    h: float
    coeffs: np.ndarray         # (n_sizes, n_intervals, 4)

    @classmethod
    def build(cls, params, p_lo: float = -120.0, p_hi: float = 120.0,
              step: float = 0.005) -> "OffsetTable":
        grid = np.arange(p_lo, p_hi + 0.5 * step, step)
        coeffs = np.empty((len(params.ladder), len(grid) - 1, 4))
        for i, z in enumerate(params.ladder):
            coeffs[i] = _spline_coeffs(grid, _solve_offset_grid(z, grid, params))
        return cls(sizes=np.asarray(params.ladder, dtype=float),
                   p0=float(grid[0]), h=float(step), coeffs=coeffs)

    def offset(self, size_index: int, p):
        vals, clamped = eval_cubic(self.p0, self.h, self.coeffs[size_index], p)
        return np.maximum(vals, QUOTE_FLOOR), clamped


@dataclass(frozen=True)
class FillTable:
    """Cubic-spline table of the logistic fill function f(delta)."""

    d0: float
    h: float
    coeffs: np.ndarray         # (n_intervals, 4)

    @classmethod
    def build(cls, params, d_lo: float = QUOTE_FLOOR - 10.0,
              d_hi: float = 140.0, step: float = 0.01) -> "FillTable":
        grid = np.arange(d_lo, d_hi + 0.5 * step, step)
        return cls(d0=float(grid[0]), h=float(step),
                   coeffs=_spline_coeffs(grid, expit(-(params.alpha + params.beta * grid))))

    def prob(self, delta):
        vals, clamped = eval_cubic(self.d0, self.h, self.coeffs, delta)
        return np.clip(vals, 0.0, 1.0), clamped
