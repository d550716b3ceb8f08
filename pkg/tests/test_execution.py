import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efpmm.execution import (
    CostSpec,
    cost,
    futures_cost,
    hamiltonian,
    hamiltonian_prime,
    quad_hamiltonian,
    quad_prime,
    spot_cost,
)

SPOT = CostSpec(psi=0.4, eta=7e-8)


def grid_sup(p, spec, v_max=1e8, n=4_000_001):
    """Brute-force sup_v (v*p - L(v)) on a dense symmetric grid."""
    v = np.linspace(-v_max, v_max, n)
    return float(np.max(v * p - spec.psi * np.abs(v) - spec.eta * v * v))


def test_cost_examples():
    assert cost(0.0, SPOT) == 0.0
    # psi*|v| + eta*v^2 at v = +/-1e6
    assert cost(1e6, SPOT) == pytest.approx(470000.0, rel=1e-12)
    assert cost(-1e6, SPOT) == pytest.approx(470000.0, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(v=st.floats(-1e7, 1e7))
def test_cost_even(v):
    assert cost(v, SPOT) == cost(-v, SPOT)


def test_hamiltonian_band_zero():
    for p in np.linspace(-0.4, 0.4, 9):
        assert hamiltonian(p, SPOT) == 0.0
        assert hamiltonian_prime(p, SPOT) == 0.0


def test_hamiltonian_closed_form_vs_grid():
    # one-time gate of the closed form against enumeration
    for p in (0.0, 0.3, 0.41, 1.4, -1.4, 5.0):
        closed = float(hamiltonian(p, SPOT))
        assert closed == pytest.approx(grid_sup(p, SPOT), rel=1e-8, abs=1e-2)
    assert hamiltonian(1.4, SPOT) == pytest.approx(1.0 / (4 * 7e-8), rel=1e-12)


def test_hamiltonian_even():
    for p in (0.7, 1.4, 3.3):
        assert hamiltonian(p, SPOT) == hamiltonian(-p, SPOT)
        assert hamiltonian_prime(p, SPOT) == -hamiltonian_prime(-p, SPOT)


def test_prime_examples():
    assert hamiltonian_prime(1.4, SPOT) == pytest.approx((1.4 - 0.4) / (2 * 7e-8),
                                                         rel=1e-12)
    assert hamiltonian_prime(-1.4, SPOT) == pytest.approx(-(1.0) / (1.4e-7),
                                                          rel=1e-12)


def test_prime_matches_finite_difference():
    h = 1e-6
    for p in (0.6, 1.4, -2.5, 10.0):
        fd = (hamiltonian(p + h, SPOT) - hamiltonian(p - h, SPOT)) / (2 * h)
        assert fd == pytest.approx(hamiltonian_prime(p, SPOT), rel=1e-4)


def test_c1_across_kink():
    # derivative vanishes from both sides of |p| = psi (continuity of H')
    for eps in (1e-9, 1e-12):
        p = SPOT.psi + eps
        assert hamiltonian_prime(p, SPOT) == (p - SPOT.psi) / (2 * SPOT.eta)
        assert hamiltonian_prime(p, SPOT) < 1e-2
        assert hamiltonian_prime(SPOT.psi - eps, SPOT) == 0.0
    assert hamiltonian_prime(SPOT.psi, SPOT) == 0.0


@settings(max_examples=100, deadline=None)
@given(p=st.floats(-20.0, 20.0))
def test_legendre_duality(p):
    v = hamiltonian_prime(p, SPOT)
    lhs = v * p - cost(v, SPOT)
    rhs = hamiltonian(p, SPOT)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_quadratic_dominates_exact():
    for p in np.linspace(-5, 5, 41):
        assert quad_hamiltonian(p, SPOT) >= hamiltonian(p, SPOT)
    assert quad_hamiltonian(0.0, SPOT) == 0.0
    assert quad_hamiltonian(1.0, SPOT) == pytest.approx(1.0 / 2.8e-7, rel=1e-12)
    assert quad_prime(1.0, SPOT) == pytest.approx(1.0 / 1.4e-7, rel=1e-12)
    # equality only at p = 0 (psi > 0)
    assert quad_hamiltonian(0.5, SPOT) > hamiltonian(0.5, SPOT)
    free = CostSpec(psi=0.0, eta=7e-8)
    for p in (0.0, 1.0, -2.0):
        assert quad_hamiltonian(p, free) == hamiltonian(p, free)


def test_cost_spec_validation(gold):
    with pytest.raises(ValueError):
        CostSpec(psi=-0.1, eta=1e-8)
    with pytest.raises(ValueError):
        CostSpec(psi=0.1, eta=0.0)
    assert spot_cost(gold) == CostSpec(0.4, 7e-8)
    assert futures_cost(gold) == CostSpec(0.2, 3e-8)
