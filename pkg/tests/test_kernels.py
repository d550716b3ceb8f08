import os

import numpy as np
import pytest

import efpmm
from efpmm import kernels, sim
from efpmm.kernels import HistSpec, available_kernels, pack_scalars, path_generator

HAVE_COMPILED = "cython" in available_kernels()

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED,
                                    reason="compiled kernel not built")


@pytest.fixture
def kernel_env(monkeypatch):
    def set_kernel(name=None, threads=None):
        if name is None:
            monkeypatch.delenv("EFPMM_KERNEL", raising=False)
        else:
            monkeypatch.setenv("EFPMM_KERNEL", name)
        if threads is None:
            monkeypatch.delenv("EFPMM_THREADS", raising=False)
        else:
            monkeypatch.setenv("EFPMM_THREADS", str(threads))
    return set_kernel


@pytest.fixture(scope="module")
def rich_run_config():
    return sim.SimConfig(
        horizon=400 / 86400.0, n_paths=150, seed=21, mode="filtered",
        initial_inventory=efpmm.Inventory(q_S=800.0),
        track_step_sums=True, window_len=100,
        hist=HistSpec(lo1=-6000, width1=200, n1=60,
                      lo2=-6000, width2=200, n2=60),
        series_stride=1, events_cap=50000)


@pytest.fixture(scope="module")
def nested_filtered():
    from efpmm import experiments
    p = efpmm.gold_params(k_D=0.2, sigma_D=2.0)
    return p, experiments.solve_value(p, filtered=True, dt_max=1e-4)


@needs_compiled
def test_kernels_bit_identical_per_path(kernel_env, rich_run_config, nested_filtered):
    p, va = nested_filtered
    kernel_env("cython")
    r_cy = sim.run_paths(rich_run_config, p, va)
    kernel_env("python")
    r_py = sim.run_paths(rich_run_config, p, va)
    assert r_cy.kernel == "cython" and r_py.kernel == "python"
    for key in r_cy.terminal:
        assert np.array_equal(r_cy.terminal[key], r_py.terminal[key]), key
    assert np.array_equal(r_cy.series, r_py.series)
    assert np.array_equal(r_cy.events, r_py.events)
    assert np.array_equal(r_cy.mtm_marks, r_py.mtm_marks)
    assert np.array_equal(r_cy.hist, r_py.hist)
    # cross-path reductions accumulate in different orders
    scale = max(1.0, float(np.max(np.abs(r_cy.step_sums))))
    assert np.max(np.abs(r_cy.step_sums - r_py.step_sums)) < 1e-12 * scale
    assert np.max(np.abs(r_cy.moments - r_py.moments)) < 1e-12 * max(
        1.0, float(np.max(np.abs(r_cy.moments))))


@pytest.mark.parametrize("kernel", ["cython", "python"])
def test_thread_count_invariance(kernel_env, rich_run_config, nested_filtered, kernel):
    if kernel == "cython" and not HAVE_COMPILED:
        pytest.skip("compiled kernel not built")
    p, va = nested_filtered
    kernel_env(kernel, threads=1)
    r1 = sim.run_paths(rich_run_config, p, va)
    kernel_env(kernel, threads=5)
    r5 = sim.run_paths(rich_run_config, p, va)
    for key in r1.terminal:
        assert np.array_equal(r1.terminal[key], r5.terminal[key]), key
    assert np.array_equal(r1.step_sums, r5.step_sums)
    assert np.array_equal(r1.hist, r5.hist)
    assert np.array_equal(r1.mtm_marks, r5.mtm_marks)
    assert np.array_equal(r1.series, r5.series)


def test_kernel_env_validation(kernel_env):
    kernel_env("fortran")
    with pytest.raises(ValueError, match="EFPMM_KERNEL"):
        kernels.active_kernel_name()
    kernel_env("python", threads=0)
    with pytest.raises(ValueError, match="EFPMM_THREADS"):
        kernels.thread_count()


def test_path_generators_are_independent_substreams():
    a1 = path_generator(7, 0).random(8)
    a2 = path_generator(7, 0).random(8)
    b = path_generator(7, 1).random(8)
    c = path_generator(8, 0).random(8)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_pack_scalars_layout(gold):
    dt = 1.0 / 86400.0
    scal = pack_scalars(gold, dt)
    assert len(scal) == kernels.NSCAL
    assert scal[0] == dt
    assert scal[1] == gold.sigma_S * np.sqrt(dt)
    assert scal[7] == gold.k_E * dt
    assert scal[10] == gold.psi_S
    assert scal[11] == 1.0 / (2 * gold.eta_S)
    assert scal[20] == -100.0


def test_fill_frequency_matches_intensity(gold, kernel_env):
    # zero value surface: constant quotes delta*(z, 0), no hedging, so the
    # per-size fill counts are binomial with probability lambda*f*dt
    from efpmm.flow import fill_probability, optimal_offset
    kernel_env(None, threads=2)
    flat = efpmm.riccati.ValueApprox(grid=np.array([0.0, 1.0]),
                                     A=np.zeros((2, 4, 4)), B=np.zeros((2, 4)))
    n_steps = 200000
    cfg = sim.SimConfig(horizon=n_steps / 86400.0, n_paths=1, seed=3,
                        stationary_policy=True, events_cap=60000)
    res = sim.run_paths(cfg, gold, flat)
    assert not res.events_truncated
    ev = res.events
    dt = cfg.dt
    for j, z in enumerate(gold.ladder):
        prob = gold.lam[j] * dt * float(fill_probability(
            optimal_offset(z, 0.0, gold), gold))
        expect = n_steps * prob
        se = np.sqrt(n_steps * prob * (1 - prob))
        for side in (0.0, 1.0):
            count = int(np.sum((ev[:, 2] == j) & (ev[:, 1] == side)))
            assert abs(count - expect) <= 3.0 * se, (z, side, count, expect)


def test_simulate_rejects_all_kernel_request_without_build(kernel_env):
    kernel_env("cython")
    if HAVE_COMPILED:
        assert kernels.active_kernel_name() == "cython"
    else:
        with pytest.raises(RuntimeError, match="not built"):
            kernels.active_kernel_name()
