"""External hedging cost functions and their Hamiltonians.

The cost of trading at rate v (oz/day) on an external venue is
``L(v) = psi*|v| + eta*v**2`` (bp*oz/day): a spread/fee term plus temporary
impact.  Its Legendre transform ``H(p) = sup_v (v*p - L(v))`` has the
closed form ``max(|p|-psi, 0)^2 / (4*eta)``, and the optimizer
``H'(p) = sign(p)*max(|p|-psi, 0) / (2*eta)`` is the optimal execution
rate for marginal inventory value p.  The linear cost creates the
no-execution band |p| <= psi.

The quadratic variants drop the linear term (``p^2/(4*eta)``,
``p/(2*eta)``); they enter only the Riccati system, never the policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CostSpec",
    "spot_cost",
    "futures_cost",
    "cost",
    "hamiltonian",
    "hamiltonian_prime",
    "quad_hamiltonian",
    "quad_prime",
]


@dataclass(frozen=True)
class CostSpec:
    """Execution cost coefficients: psi (bp), eta (bp*day/oz)."""

    psi: float
    eta: float

    def __post_init__(self):
        if self.psi < 0:
            raise ValueError("psi must be nonnegative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


def spot_cost(params) -> CostSpec:
    return CostSpec(params.psi_S, params.eta_S)


def futures_cost(params) -> CostSpec:
    return CostSpec(params.psi_F, params.eta_F)


def cost(v, spec: CostSpec):
    """L(v) = psi*|v| + eta*v^2, bp*oz/day.  Even, convex, zero at zero."""
    av = np.abs(v)
    return spec.psi * av + spec.eta * av * av


def hamiltonian(p, spec: CostSpec):
    """H(p) = sup_v (v*p - L(v)) = max(|p|-psi, 0)^2 / (4*eta)."""
    w = np.maximum(np.abs(p) - spec.psi, 0.0)
    return w * w / (4.0 * spec.eta)


def hamiltonian_prime(p, spec: CostSpec):
    """Optimal execution rate H'(p) = sign(p)*max(|p|-psi, 0)/(2*eta).

    Zero on the no-execution band |p| <= psi.
    """
    w = np.maximum(np.abs(p) - spec.psi, 0.0)
    return np.sign(p) * w / (2.0 * spec.eta)


def quad_hamiltonian(p, spec: CostSpec):
    """p^2/(4*eta): Hamiltonian of the psi-less quadratic cost."""
    return p * p / (4.0 * spec.eta)


def quad_prime(p, spec: CostSpec):
    """p/(2*eta): optimizer of the quadratic-cost Hamiltonian."""
    return p / (2.0 * spec.eta)
