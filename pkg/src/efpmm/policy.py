"""Near-optimal quote and hedge controls from the quadratic value surface.

With x = (q_S, q_F, E, D) and A(t), B(t) from the Riccati solution, the
reservation-price shift for a size-z client trade is affine in the state:

    bid:  p_b(z) = z*A11 + 2*(A x)_1 + B_1
    ask:  p_a(z) = z*A11 - 2*(A x)_1 - B_1

and the optimal offsets are the exact delta*(z, p) of the quote
Hamiltonian (no quadratic approximation at this stage).  Hedge rates use
the exact execution Hamiltonian derivative applied to the affine marginal
inventory values m_S = -2*(A x)_1 - B_1 and m_F = -2*(A x)_2 - B_2, so
each instrument has the no-execution slab {|m| <= psi} between two
parallel hyperplanes.

Skew is (ask offset - bid offset)/2: positive skew shifts both quotes up,
attracting client sells (the dealer buys).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import execution, flow
from .riccati import ValueApprox

__all__ = ["ControlDecision", "NoExecZone", "decide", "no_execution_zone", "skew"]

_AXES = ("q_S", "q_F", "E", "D")


@dataclass(frozen=True)
class ControlDecision:
    """Per-size quote offsets (bp) and execution rates (oz/day)."""

    bid_offsets: np.ndarray
    ask_offsets: np.ndarray
    v_S: float
    v_F: float


def _marginals(va: ValueApprox, t: float, x: np.ndarray) -> tuple[np.ndarray, float, float, float]:
    A = va.A_at(t)
    B = va.B_at(t)
    ax1 = float(A[0] @ x)
    ax2 = float(A[1] @ x)
    m_S = -2.0 * ax1 - B[0]
    m_F = -2.0 * ax2 - B[1]
    return A, m_S, m_F, float(A[0, 0])


def decide(va: ValueApprox, t: float, x, params, *, futures: bool = True) -> ControlDecision:
    """Evaluate the full control vector at (t, x)."""
    x = np.asarray(x, dtype=float)
    _, m_S, m_F, a11 = _marginals(va, t, x)
    bids = np.empty(len(params.ladder))
    asks = np.empty(len(params.ladder))
    for i, z in enumerate(params.ladder):
        bids[i] = flow.optimal_offset(z, z * a11 - m_S, params)
        asks[i] = flow.optimal_offset(z, z * a11 + m_S, params)
    v_S = float(execution.hamiltonian_prime(m_S, execution.spot_cost(params)))
    v_F = float(execution.hamiltonian_prime(m_F, execution.futures_cost(params))) if futures else 0.0
    return ControlDecision(bid_offsets=bids, ask_offsets=asks, v_S=v_S, v_F=v_F)


@dataclass(frozen=True)
class NoExecZone:
    """The slab |c0 + cu*u + cv*v| <= psi on a 2D state slice (u, v).

    ``buy_boundary``/``sell_boundary`` solve for the second axis: buying
    (v > 0 in the instrument) starts above marginal value +psi, selling
    below -psi.  ``degenerate`` marks an unbounded zone (both coefficients
    vanish, so the marginal value cannot leave the band in this slice).
    """

    axes: tuple[str, str]
    c0: float
    cu: float
    cv: float
    psi: float
    degenerate: bool

    def marginal(self, u, v):
        return self.c0 + self.cu * np.asarray(u, float) + self.cv * np.asarray(v, float)

    def _solve_v(self, u, target):
        if self.cv == 0.0:
            raise ZeroDivisionError("zone boundary is parallel to the second axis")
        return (target - self.c0 - self.cu * np.asarray(u, float)) / self.cv

    def buy_boundary(self, u):
        """v where the marginal value hits +psi (buying beyond)."""
        return self._solve_v(u, self.psi)

    def sell_boundary(self, u):
        """v where the marginal value hits -psi (selling beyond)."""
        return self._solve_v(u, -self.psi)


def no_execution_zone(
    va: ValueApprox,
    t: float,
    instrument: str,
    params,
    free_axes: tuple[str, str] = ("q_S", "E"),
    fixed: dict | None = None,
) -> NoExecZone:
    """Affine description of {|marginal value| <= psi} on a 2D slice.

    ``fixed`` pins the remaining two state coordinates (default 0).
    """
    if instrument == "spot":
        row_index, psi = 0, params.psi_S
    elif instrument == "futures":
        row_index, psi = 1, params.psi_F
    else:
        raise ValueError("instrument must be 'spot' or 'futures'")
    if len(free_axes) != 2 or any(a not in _AXES for a in free_axes) \
            or free_axes[0] == free_axes[1]:
        raise ValueError(f"free_axes must be two distinct of {_AXES}")
    fixed = dict(fixed or {})
    if any(a not in _AXES or a in free_axes for a in fixed):
        raise ValueError("fixed axes must be the complement of free_axes")

    A = va.A_at(t)
    B = va.B_at(t)
    row = A[row_index]
    x0 = np.zeros(4)
    for name, value in fixed.items():
        x0[_AXES.index(name)] = value
    c0 = float(-2.0 * row @ x0 - B[row_index])
    cu = float(-2.0 * row[_AXES.index(free_axes[0])])
    cv = float(-2.0 * row[_AXES.index(free_axes[1])])
    degenerate = cu == 0.0 and cv == 0.0
    return NoExecZone(axes=tuple(free_axes), c0=c0, cu=cu, cv=cv, psi=psi,
                      degenerate=degenerate)


def skew(va: ValueApprox, t: float, x, z: float, params) -> float:
    """(ask offset - bid offset)/2 for ladder size z, bp."""
    ladder = np.asarray(params.ladder)
    matches = np.nonzero(np.isclose(ladder, z, rtol=1e-9, atol=0.0))[0]
    if len(matches) == 0:
        raise ValueError(f"size {z} is not in the ladder {params.ladder}")
    x = np.asarray(x, dtype=float)
    _, m_S, _, a11 = _marginals(va, t, x)
    zz = float(ladder[matches[0]])
    bid = flow.optimal_offset(zz, zz * a11 - m_S, params)
    ask = flow.optimal_offset(zz, zz * a11 + m_S, params)
    return 0.5 * (ask - bid)
