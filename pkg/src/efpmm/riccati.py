"""Backward matrix Riccati system for the quadratic value approximation.

The approximate certainty-equivalent value is the quadratic polynomial

    theta(t, x) = -x^T A(t) x - x^T B(t),    x = (q_S, q_F, E, D),

whose coefficients solve the terminal-value ODE system

    A' = A M A + A U + U^T A + R,      A(T) = diag(K_S, K_F, 0, 0),
    B' = A M B + A V + U^T B,          B(T) = 0,

with constant matrices assembled from the model parameters and the
quadratic quote-Hamiltonian fit (entries expanded below in
``build_system``; the assembly is cross-checked end-to-end by the PDE
residual diagnostic ``hjb_residual``).  The x-independent coefficient of
the polynomial is irrelevant to the controls and is not computed.

Integration is classical fixed-step RK4 backward from T, with A
re-symmetrized after every step; solutions are stored on the step grid
and queried by linear interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import execution
from .flow import QuadHamiltonian
from .params import ModelParams, covariance_matrix, validate

__all__ = [
    "RiccatiSystem",
    "ValueApprox",
    "RiccatiBlowupError",
    "build_system",
    "solve",
    "theta_check",
    "hjb_residual",
]

_CSV_HEADER = (
    "t",
    "A11", "A12", "A13", "A14", "A22", "A23", "A24", "A33", "A34", "A44",
    "B1", "B2", "B3", "B4",
)


class RiccatiBlowupError(RuntimeError):
    """Non-finite entries during backward integration (mis-scaled inputs)."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"Riccati integration blew up at t={t:.6g} day")


@dataclass(frozen=True)
class RiccatiSystem:
    """Constant matrices of the A/B ODE system plus terminal conditions."""

    M_A: np.ndarray       # (4,4) symmetric
    U_A: np.ndarray       # (4,4)
    R_A: np.ndarray       # (4,4) symmetric
    V_B: np.ndarray       # (4,)
    terminal_A: np.ndarray
    terminal_B: np.ndarray

    def rhs(self, A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        AM = A @ self.M_A
        AU = A @ self.U_A
        dA = AM @ A + AU + AU.T + self.R_A
        dB = AM @ B + A @ self.V_B + self.U_A.T @ B
        return dA, dB


def build_system(
    params: ModelParams,
    quad: QuadHamiltonian,
    *,
    sigma: np.ndarray | None = None,
    futures: bool = True,
) -> RiccatiSystem:
    """Assemble M, U, R, V and the terminal conditions.

    ``sigma`` overrides the price covariance matrix (the partial-information
    mode substitutes the filtered covariance built from sigma_D_hat and the
    rank-2 innovation correlation); default is ``covariance_matrix(params)``.

    ``futures=False`` removes the futures execution channel from the
    system (its quadratic Hamiltonian term is dropped, i.e. M22 = 0)
    rather than sending costs to infinity, which would ill-condition M.
    """
    validate(params)
    S = covariance_matrix(params) if sigma is None else np.asarray(sigma, dtype=float)
    if S.shape != (3, 3) or not np.allclose(S, S.T, atol=1e-12):
        raise ValueError("sigma must be a symmetric 3x3 covariance matrix")
    g = params.gamma
    kE, kD = params.k_E, params.k_D

    # Sum_i z_i * lambda_i: total one-sided client volume intensity, oz/day.
    delta1 = float(np.dot(params.ladder, params.lam))

    M = np.zeros((4, 4))
    M[0, 0] = 4.0 * quad.a2 * delta1 + 1.0 / params.eta_S
    M[1, 1] = (1.0 / params.eta_F) if futures else 0.0
    M[2:, 2:] = -2.0 * g * S[1:, 1:]

    # U: top two rows zero; bottom-left couples (E, D) drift to the risk
    # vector (q_S + q_F, q_F); bottom-right is the mean-reversion block.
    U = np.zeros((4, 4))
    U[2, 0] = g * S[1, 0]
    U[2, 1] = g * (S[1, 0] + S[1, 1])
    U[3, 0] = g * S[2, 0]
    U[3, 1] = g * (S[2, 0] + S[2, 1])
    U[2, 2] = kE
    U[2, 3] = -kE
    U[3, 3] = kD

    # R: inventory risk quadratic form plus the q_F / (E, D) coupling of
    # the EFP drift acting on the futures mark-to-market.
    R = np.zeros((4, 4))
    R[0, 0] = S[0, 0]
    R[0, 1] = R[1, 0] = S[0, 0] + S[0, 1]
    R[1, 1] = S[0, 0] + 2.0 * S[0, 1] + S[1, 1]
    R *= -0.5 * g
    half_ke = 0.5 * kE
    R[1, 2] -= half_ke
    R[2, 1] -= half_ke
    R[1, 3] += half_ke
    R[3, 1] += half_ke

    V = np.array([0.0, 0.0, 0.0, -2.0 * kD * params.D_bar])

    terminal_A = np.diag([params.K_S, params.K_F, 0.0, 0.0])
    terminal_B = np.zeros(4)
    return RiccatiSystem(M_A=M, U_A=U, R_A=R, V_B=V,
                         terminal_A=terminal_A, terminal_B=terminal_B)


@dataclass(frozen=True)
class ValueApprox:
    """Time-indexed Riccati solution on an ascending grid over [0, T]."""

    grid: np.ndarray      # (n,) strictly increasing, grid[0]=0, grid[-1]=T
    A: np.ndarray         # (n, 4, 4) symmetric
    B: np.ndarray         # (n, 4)
    max_step_asymmetry: float = 0.0

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def _locate(self, t) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.grid[-1] + 1e-12):
            raise ValueError(f"t outside [0, {self.grid[-1]}]")
        i = np.clip(np.searchsorted(self.grid, t, side="right") - 1,
                    0, len(self.grid) - 2)
        h = self.grid[i + 1] - self.grid[i]
        w = np.clip((t - self.grid[i]) / h, 0.0, 1.0)
        return i, w

    def A_at(self, t: float) -> np.ndarray:
        i, w = self._locate(t)
        return (1.0 - w) * self.A[i] + w * self.A[i + 1]

    def B_at(self, t: float) -> np.ndarray:
        i, w = self._locate(t)
        return (1.0 - w) * self.B[i] + w * self.B[i + 1]

    def policy_rows(self, times: np.ndarray) -> np.ndarray:
        """(len(times), 11) rows [A11, A row 1, B1, A row 2, B2].

        This is the per-step coefficient layout the simulation kernels
        consume.
        """
        i, w = self._locate(np.asarray(times, dtype=float))
        w = w[:, None]
        rows1 = (1.0 - w) * self.A[i, 0, :] + w * self.A[i + 1, 0, :]
        rows2 = (1.0 - w) * self.A[i, 1, :] + w * self.A[i + 1, 1, :]
        b = (1.0 - w) * self.B[i][:, :2] + w * self.B[i + 1][:, :2]
        out = np.empty((len(i), 11))
        out[:, 0] = rows1[:, 0]
        out[:, 1:5] = rows1
        out[:, 5] = b[:, 0]
        out[:, 6:10] = rows2
        out[:, 10] = b[:, 1]
        return out

    def to_csv(self, path: str | Path) -> None:
        iu = np.triu_indices(4)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(_CSV_HEADER)
            for t, A, B in zip(self.grid, self.A, self.B):
                w.writerow([repr(float(t))]
                           + [repr(float(v)) for v in A[iu]]
                           + [repr(float(v)) for v in B])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ValueApprox":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        n = len(data)
        grid = np.array([row["t"] for row in data])
        A = np.zeros((n, 4, 4))
        B = np.zeros((n, 4))
        iu = np.triu_indices(4)
        for k, row in enumerate(data):
            vals = [row[name] for name in _CSV_HEADER[1:11]]
            A[k][iu] = vals
            A[k] = A[k] + A[k].T - np.diag(np.diag(A[k]))
            B[k] = [row[name] for name in _CSV_HEADER[11:]]
        return cls(grid=grid, A=A, B=B)


def solve(system: RiccatiSystem, T: float, dt_max: float = 1e-5) -> ValueApprox:
    """Integrate backward from t=T to t=0 with fixed-step RK4.

    The step is T/n with n = ceil(T/dt_max).  A is symmetrized after every
    step; the largest pre-symmetrization asymmetry is recorded (it stays
    at rounding level when the RHS is assembled correctly).

    Raises:
        RiccatiBlowupError: on non-finite entries, carrying the time.
    """
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    if T <= 0:
        raise ValueError("T must be positive")
    n = max(1, math.ceil(T / dt_max))
    h = -T / n
    A = np.empty((n + 1, 4, 4))
    B = np.empty((n + 1, 4))
    A[n] = system.terminal_A
    B[n] = system.terminal_B
    worst_asym = 0.0
    a, b = A[n].copy(), B[n].copy()
    # overflow on the way to a detected blow-up is expected; keep it quiet
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n, 0, -1):
            ka1, kb1 = system.rhs(a, b)
            ka2, kb2 = system.rhs(a + 0.5 * h * ka1, b + 0.5 * h * kb1)
            ka3, kb3 = system.rhs(a + 0.5 * h * ka2, b + 0.5 * h * kb2)
            ka4, kb4 = system.rhs(a + h * ka3, b + h * kb3)
            a = a + (h / 6.0) * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4)
            b = b + (h / 6.0) * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4)
            asym = float(np.max(np.abs(a - a.T)))
            worst_asym = max(worst_asym, asym)
            a = 0.5 * (a + a.T)
            t_k = T * (k - 1) / n
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise RiccatiBlowupError(t_k)
            A[k - 1] = a
            B[k - 1] = b
    grid = np.linspace(0.0, T, n + 1)
    return ValueApprox(grid=grid, A=A, B=B, max_step_asymmetry=worst_asym)


def theta_check(va: ValueApprox, t: float, x) -> float:
    """-x^T A(t) x - x^T B(t) (diagnostic; controls read A, B directly)."""
    x = np.asarray(x, dtype=float)
    A = va.A_at(t)
    B = va.B_at(t)
    return float(-x @ A @ x - x @ B)


def hjb_residual(
    va: ValueApprox,
    t: float,
    x,
    params: ModelParams,
    quad: QuadHamiltonian,
    *,
    sigma: np.ndarray | None = None,
    futures: bool = True,
) -> tuple[float, float]:
    """Residual of the quadratic HJB equation at (t, x), constants dropped.

    Substitutes the polynomial value into the full equation (quadratic
    quote Hamiltonian, quadratic execution Hamiltonians, drift, risk and
    diffusion terms) with the time derivative taken from the ODE right
    hand side, and subtracts the x=0 value so that the unchecked
    x-independent component drops out.  Returns (residual, scale) where
    scale is the largest participating term; residual/scale is at rounding
    level when the system assembly matches the equation.
    """
    params = validate(params)
    S = covariance_matrix(params) if sigma is None else np.asarray(sigma, dtype=float)
    system = build_system(params, quad, sigma=sigma, futures=futures)
    A = va.A_at(t)
    B = va.B_at(t)
    dA, dB = system.rhs(A, B)
    zs = np.asarray(params.ladder)
    lams = np.asarray(params.lam)

    def terms(xv: np.ndarray) -> np.ndarray:
        qS, qF, E, D = xv
        u = 2.0 * A @ xv + B           # -grad theta
        dt_term = -xv @ dA @ xv - xv @ dB
        drift_E = -params.k_E * (E - D) * (qF - u[2])
        drift_D = params.k_D * (D - params.D_bar) * u[3]
        w = np.array([qS + qF, qF - u[2], -u[3]])
        risk = -0.5 * params.gamma * (w @ S @ w)
        jplus = zs * A[0, 0] + u[0]
        jminus = zs * A[0, 0] - u[0]
        jump = float(np.sum(zs * lams * (quad(jplus) + quad(jminus))))
        hS = u[0] * u[0] / (4.0 * params.eta_S)
        hF = (u[1] * u[1] / (4.0 * params.eta_F)) if futures else 0.0
        return np.array([dt_term, drift_E, drift_D, risk, jump, hS, hF])

    tx = terms(np.asarray(x, dtype=float))
    t0 = terms(np.zeros(4))
    residual = float(np.sum(tx) - np.sum(t0))
    scale = float(np.max(np.abs(tx)))
    return residual, scale
