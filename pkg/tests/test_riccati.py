import numpy as np
import pytest

from efpmm import riccati
from efpmm.riccati import (
    RiccatiBlowupError,
    RiccatiSystem,
    ValueApprox,
    build_system,
    hjb_residual,
    solve,
    theta_check,
)


def test_client_volume_intensity(gold, gold_quad):
    sys = build_system(gold, gold_quad)
    delta1 = float(np.dot(gold.ladder, gold.lam))
    assert delta1 == 2_020_000.0
    assert sys.M_A[0, 0] == pytest.approx(4 * gold_quad.a2 * delta1 + 1 / gold.eta_S,
                                          rel=1e-14)
    assert sys.M_A[1, 1] == pytest.approx(1 / gold.eta_F, rel=1e-14)


def test_system_matrices_structure(gold, gold_quad):
    sys = build_system(gold, gold_quad)
    assert np.array_equal(sys.M_A, sys.M_A.T)
    assert np.array_equal(sys.R_A, sys.R_A.T)
    assert np.array_equal(sys.U_A[:2], np.zeros((2, 4)))
    # mean-reversion block of U
    assert sys.U_A[2, 2] == gold.k_E
    assert sys.U_A[2, 3] == -gold.k_E
    assert sys.U_A[3, 3] == gold.k_D
    assert np.array_equal(sys.V_B, [0, 0, 0, -2 * gold.k_D * gold.D_bar])


def test_terminal_conditions_match_objective(gold_quad):
    import efpmm
    p = efpmm.gold_params(K_S=1e-3, K_F=2e-3)
    sys = build_system(p, gold_quad)
    # the terminal penalty steepens the fast modes; default-resolution step
    va = solve(sys, p.T, dt_max=1e-5)
    assert np.array_equal(va.A[-1], np.diag([1e-3, 2e-3, 0.0, 0.0]))
    assert np.array_equal(va.B[-1], np.zeros(4))
    # the quadratic value matches the terminal inventory penalty
    for q in (500.0, -1200.0):
        assert theta_check(va, p.T, (q, 0, 0, 0)) == pytest.approx(-1e-3 * q * q,
                                                                   rel=1e-12)
        assert theta_check(va, p.T, (0, q, 0, 0)) == pytest.approx(-2e-3 * q * q,
                                                                   rel=1e-12)


def test_zero_source_system_stays_zero():
    zero = RiccatiSystem(
        M_A=np.diag([1.0, 1.0, -1.0, -1.0]), U_A=np.zeros((4, 4)),
        R_A=np.zeros((4, 4)), V_B=np.zeros(4),
        terminal_A=np.zeros((4, 4)), terminal_B=np.zeros(4))
    va = solve(zero, 0.5, dt_max=1e-3)
    assert np.array_equal(va.A, np.zeros_like(va.A))
    assert np.array_equal(va.B, np.zeros_like(va.B))


def test_symmetry_preserved_at_rounding_level(gold, gold_quad, gold_va):
    assert gold_va.max_step_asymmetry < 1e-12
    for A in gold_va.A[:: len(gold_va.A) // 7]:
        assert np.array_equal(A, A.T)


def test_rk4_fourth_order_convergence(gold, gold_quad):
    sys = build_system(gold, gold_quad)
    T = 600.0 / 86400.0
    sols = [solve(sys, T, dt_max=h).A[0] for h in (4e-5, 2e-5, 1e-5)]
    e1 = np.max(np.abs(sols[0] - sols[1]))
    e2 = np.max(np.abs(sols[1] - sols[2]))
    assert e1 / e2 >= 8.0


def test_rk4_matches_fine_euler(gold, gold_quad):
    # independent coarse integrator: explicit Euler at a much finer step
    sys = build_system(gold, gold_quad)
    T = 600.0 / 86400.0
    va = solve(sys, T, dt_max=1e-5)
    n = int(round(T / 2e-8))
    h = T / n
    a = sys.terminal_A.copy()
    b = sys.terminal_B.copy()
    for _ in range(n):
        da, db = sys.rhs(a, b)
        a = a - h * da
        b = b - h * db
        a = 0.5 * (a + a.T)
    rel = np.max(np.abs(va.A[0] - a)) / np.max(np.abs(a))
    assert rel < 1e-6


def test_pde_residual_at_grid_nodes(gold, gold_quad, gold_va):
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = float(rng.choice(gold_va.grid))
        x = rng.normal(scale=[2000.0, 2000.0, 5.0, 5.0])
        res, scale = hjb_residual(gold_va, t, x, gold, gold_quad)
        assert abs(res) <= 1e-6 * scale


def test_pde_residual_filtered_mode():
    import efpmm
    from efpmm.filtering import effective_covariance
    from efpmm.flow import fit_quadratic
    p = efpmm.gold_params(k_D=0.2, sigma_D=2.0, rho=0.3)
    quad = fit_quadratic(p)
    sigma = effective_covariance(p)
    va = solve(build_system(p, quad, sigma=sigma), p.T, dt_max=1e-4)
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = float(rng.choice(va.grid))
        x = rng.normal(scale=[1000.0, 1000.0, 4.0, 2.0])
        res, scale = hjb_residual(va, t, x, p, quad, sigma=sigma)
        assert abs(res) <= 1e-6 * scale


def test_blowup_raises_with_time():
    # scalar Riccati a' = a^2 from a(T) = -4/T diverges at tau = T/4
    bad = RiccatiSystem(
        M_A=np.diag([1.0, 0.0, 0.0, 0.0]), U_A=np.zeros((4, 4)),
        R_A=np.zeros((4, 4)), V_B=np.zeros(4),
        terminal_A=np.diag([-400.0, 0.0, 0.0, 0.0]), terminal_B=np.zeros(4))
    with pytest.raises(RiccatiBlowupError) as exc:
        solve(bad, 1.0, dt_max=1e-4)
    assert 0.0 <= exc.value.t < 1.0


def test_interpolation(gold_va):
    g = gold_va.grid
    assert np.array_equal(gold_va.A_at(g[10]), gold_va.A[10])
    mid = 0.5 * (g[10] + g[11])
    assert np.allclose(gold_va.A_at(mid), 0.5 * (gold_va.A[10] + gold_va.A[11]),
                       rtol=1e-14)
    with pytest.raises(ValueError):
        gold_va.A_at(gold_va.T + 1.0)


def test_policy_rows_layout(gold_va):
    t = np.array([0.0, gold_va.T / 3, gold_va.T])
    rows = gold_va.policy_rows(t)
    for k, tk in enumerate(t):
        A = gold_va.A_at(float(tk))
        B = gold_va.B_at(float(tk))
        assert rows[k, 0] == pytest.approx(A[0, 0], rel=1e-14)
        assert np.allclose(rows[k, 1:5], A[0], rtol=1e-14)
        assert rows[k, 5] == pytest.approx(B[0], abs=1e-14)
        assert np.allclose(rows[k, 6:10], A[1], rtol=1e-14)
        assert rows[k, 10] == pytest.approx(B[1], abs=1e-14)


def test_csv_round_trip(gold, gold_quad, tmp_path):
    sys = build_system(gold, gold_quad)
    va = solve(sys, 600.0 / 86400.0, dt_max=2e-5)
    path = tmp_path / "va.csv"
    va.to_csv(path)
    back = ValueApprox.from_csv(path)
    assert np.array_equal(back.grid, va.grid)
    assert np.array_equal(back.A, va.A)
    assert np.array_equal(back.B, va.B)


def test_theta_check_structure(gold_quad):
    import efpmm
    # D_bar != 0 gives a nonzero linear coefficient B
    p = efpmm.gold_params(k_D=0.2, sigma_D=2.0, D_bar=3.0)
    va = solve(build_system(p, gold_quad), p.T, dt_max=1e-4)
    assert theta_check(va, 0.0, np.zeros(4)) == 0.0
    t = va.T / 2
    x = np.array([700.0, -300.0, 2.0, 1.0])
    assert float(np.max(np.abs(va.B_at(t)))) > 0
    # theta(2x) - 4*theta(x) isolates the linear part: equals 2*x.B
    got = theta_check(va, t, 2 * x) - 4.0 * theta_check(va, t, x)
    assert got == pytest.approx(2.0 * float(x @ va.B_at(t)), rel=1e-10)
