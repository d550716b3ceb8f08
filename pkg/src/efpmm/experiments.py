"""Figure-class experiment drivers behind the CLI commands.

Each function returns (rows, header) CSV payloads or JSON-ready dicts;
the CLI owns file writing and manifests.  All randomness flows through
the simulation seed, so outputs are deterministic given (config, seed).
"""

from __future__ import annotations

from dataclasses import replace as dc_replace

import numpy as np

from . import filtering, policy, riccati, sim
from .flow import fit_quadratic
from .kernels import HistSpec
from .params import Inventory, ModelParams
from .riccati import ValueApprox

__all__ = [
    "solve_value",
    "ladder_scan",
    "relaxation",
    "zone_boundaries",
    "skew_map",
    "nested_sweep",
    "risk_frontier",
    "spread_comparison",
    "filter_demo",
]


def solve_value(params: ModelParams, *, dt_max: float = 1e-5,
                filtered: bool = False, futures: bool = True) -> ValueApprox:
    """Fit the quadratic quote Hamiltonian and solve the Riccati system.

    ``filtered`` substitutes the partial-information covariance (filtered
    mean-level volatility and rank-2 innovation correlation).
    """
    quad = fit_quadratic(params)
    sigma = filtering.effective_covariance(params) if filtered else None
    system = riccati.build_system(params, quad, sigma=sigma, futures=futures)
    return riccati.solve(system, params.T, dt_max=dt_max)


def ladder_scan(params: ModelParams, va: ValueApprox, q_S_grid: np.ndarray,
                q_F: float = 0.0, E: float = 0.0, D: float = 0.0,
                t: float = 0.0, futures: bool = True):
    """Per-size offsets and hedge rates along a spot-inventory grid."""
    header = (["q_S"]
              + [f"bid_{z:g}" for z in params.ladder]
              + [f"ask_{z:g}" for z in params.ladder]
              + ["v_S", "v_F"])
    rows = []
    for q in q_S_grid:
        d = policy.decide(va, t, (q, q_F, E, D), params, futures=futures)
        rows.append([q, *d.bid_offsets, *d.ask_offsets, d.v_S, d.v_F])
    return rows, header


def relaxation(params: ModelParams, va: ValueApprox, *, q_S0: float = 1000.0,
               n_paths: int = 20000, dt: float = 1.0 / 86400.0, seed: int = 0):
    """Mean inventory relaxation after a client trade (ensemble means)."""
    cfg = sim.SimConfig(horizon=params.T, n_paths=n_paths, dt=dt, seed=seed,
                        initial_inventory=Inventory(q_S=q_S0),
                        track_step_sums=True)
    res = sim.run_paths(cfg, params, va)
    m = res.step_means()
    header = ["t_s", "mean_q_S", "se_q_S", "mean_q_F", "se_q_F",
              "mean_q_net", "se_q_net"]
    rows = np.column_stack([
        m["t"] * 86400.0, m["mean_q_S"], m["se_q_S"],
        m["mean_q_F"], m["se_q_F"], m["mean_q_net"], m["se_q_net"]]).tolist()
    return rows, header, res


def zone_boundaries(params: ModelParams, va: ValueApprox, eps_grid: np.ndarray,
                    q_F: float = 0.0, D: float = 0.0, t: float = 0.0):
    """Spot/futures execution-onset inventories vs normalized deviation.

    For each instrument the no-execution slab is affine, so the onsets
    are the two lines q_S(eps) where the marginal value hits +/- psi
    (buying above +psi, selling below -psi).
    """
    header = ["eps", "spot_buy_q_S", "spot_sell_q_S",
              "futures_buy_q_S", "futures_sell_q_S"]
    zs = policy.no_execution_zone(va, t, "spot", params,
                                  free_axes=("E", "q_S"),
                                  fixed={"q_F": q_F, "D": D})
    zf = policy.no_execution_zone(va, t, "futures", params,
                                  free_axes=("E", "q_S"),
                                  fixed={"q_F": q_F, "D": D})
    rows = []
    for eps in eps_grid:
        e = eps * params.sigma_E
        rows.append([eps, zs.buy_boundary(e), zs.sell_boundary(e),
                     zf.buy_boundary(e), zf.sell_boundary(e)])
    return rows, header


def skew_map(params: ModelParams, va: ValueApprox, efp_grid: np.ndarray,
             eps_grid: np.ndarray, z: float | None = None, t: float = 0.0):
    """Top-of-book skew over (EFP position, normalized deviation).

    EFP position Q means the paired holding q_F = Q, q_S = -Q.
    """
    z = params.ladder[0] if z is None else z
    header = ["efp_position", "eps", "skew"]
    rows = []
    for q in efp_grid:
        for eps in eps_grid:
            x = (-q, q, eps * params.sigma_E, 0.0)
            rows.append([q, eps, policy.skew(va, t, x, z, params)])
    return rows, header


def nested_sweep(params: ModelParams, ratios: np.ndarray, *, eps: float = 1.0,
                 dt_max: float = 1e-5):
    """Skew and spot-onset deviation vs normalized mean volatility.

    For each sigma_D = ratio * sigma_E the covariance is rebuilt, the
    quadratic fit and Riccati solve rerun, and the top-of-book skew at
    the given deviation plus the zero-inventory spot execution onset
    (in deviation units) recorded.
    """
    header = ["sigma_D_over_sigma_E", "skew_at_eps", "spot_onset_eps"]
    rows = []
    for r in ratios:
        p = params.replace(sigma_D=float(r) * params.sigma_E)
        va = solve_value(p, dt_max=dt_max)
        x = (0.0, 0.0, eps * p.sigma_E, 0.0)
        sk = policy.skew(va, 0.0, x, p.ladder[0], p)
        zone = policy.no_execution_zone(va, 0.0, "spot", p,
                                        free_axes=("q_S", "E"),
                                        fixed={"q_F": 0.0, "D": 0.0})
        onset = zone.buy_boundary(0.0) / p.sigma_E
        rows.append([float(r), sk, abs(onset)])
    return rows, header


def _stationary_run(params: ModelParams, va: ValueApprox, *, n_paths: int,
                    horizon_s: float, seed: int, q_span: float = 12000.0,
                    bin_oz: float = 250.0) -> tuple[sim.SimResult, sim.StationaryStats]:
    nb = int(2 * q_span / bin_oz)
    cfg = sim.SimConfig(
        horizon=horizon_s / 86400.0, n_paths=n_paths, seed=seed,
        stationary_policy=True, window_len=3600,
        hist=HistSpec(lo1=-q_span, width1=bin_oz, n1=nb,
                      lo2=-q_span, width2=bin_oz, n2=nb,
                      stride=10, sample_start=36000))
    res = sim.run_paths(cfg, params, va)
    return res, sim.stationary_stats(res, discard_windows=10)


def risk_frontier(params: ModelParams, gammas: np.ndarray, *, n_paths: int = 8,
                  horizon_s: float = 200000.0, seed: int = 0,
                  dt_max: float = 1e-5):
    """Volume shares and hourly P&L moments as functions of risk aversion."""
    header = ["gamma", "share_client_bid", "share_client_ask",
              "share_hedge_spot", "share_hedge_futures",
              "hourly_pnl_mean", "hourly_pnl_std", "hourly_sharpe"]
    rows = []
    for i, g in enumerate(gammas):
        p = params.replace(gamma=float(g))
        va = solve_value(p, dt_max=dt_max)
        _, st = _stationary_run(p, va, n_paths=n_paths, horizon_s=horizon_s,
                                seed=seed + i)
        sh = st.volume_shares
        sharpe = st.hourly_pnl_mean / st.hourly_pnl_std if st.hourly_pnl_std > 0 else 0.0
        rows.append([float(g), sh["client_bid"], sh["client_ask"],
                     sh["hedge_spot"], sh["hedge_futures"],
                     st.hourly_pnl_mean, st.hourly_pnl_std, sharpe])
    return rows, header


def spread_comparison(params: ModelParams, *, q_S_values=(0.0, 2500.0),
                      q_S_grid: np.ndarray | None = None, dt_max: float = 1e-5):
    """Quoted spreads with and without the futures hedging channel.

    The futures-less dealer solves the same system with the futures
    control removed (not with costs sent to infinity).  Returns
    (per-size rows, per-size header, top-of-book rows, top header).
    """
    va_with = solve_value(params, dt_max=dt_max, futures=True)
    va_without = solve_value(params, dt_max=dt_max, futures=False)

    size_header = ["size", "q_S", "spread_with_futures", "spread_spot_only"]
    size_rows = []
    for q in q_S_values:
        for z in params.ladder:
            row = [z, q]
            for va, futures in ((va_with, True), (va_without, False)):
                d = policy.decide(va, 0.0, (q, 0.0, 0.0, 0.0), params,
                                  futures=futures)
                j = list(params.ladder).index(z)
                row.append(d.bid_offsets[j] + d.ask_offsets[j])
            size_rows.append(row)

    if q_S_grid is None:
        q_S_grid = np.linspace(-4000.0, 4000.0, 81)
    top_header = ["q_S", "top_spread_with_futures", "top_spread_spot_only"]
    top_rows = []
    for q in q_S_grid:
        row = [float(q)]
        for va, futures in ((va_with, True), (va_without, False)):
            d = policy.decide(va, 0.0, (q, 0.0, 0.0, 0.0), params,
                              futures=futures)
            row.append(d.bid_offsets[0] + d.ask_offsets[0])
        top_rows.append(row)
    return size_rows, size_header, top_rows, top_header


def filter_demo(params: ModelParams, *, horizon_s: float = 7200.0,
                n_paths: int = 512, seed: int = 0, dt: float = 1.0 / 86400.0):
    """Paired-seed comparison of oracle-D and filtered-D trading.

    Both modes consume identical randomness; the filtered run solves the
    Riccati system under the effective covariance and feeds the filter's
    estimate to the policy.  Returns a summary dict and a sample-path
    trace of D versus its estimate.
    """
    va_oracle = solve_value(params, filtered=False)
    va_filtered = solve_value(params, filtered=True)
    base = sim.SimConfig(horizon=horizon_s / 86400.0, n_paths=n_paths,
                         dt=dt, seed=seed, series_stride=60)
    res_o = sim.run_paths(dc_replace(base, mode="oracle"), params, va_oracle)
    res_f = sim.run_paths(dc_replace(base, mode="filtered"), params, va_filtered)

    diff = res_f.terminal["mtm"] - res_o.terminal["mtm"]
    dhat_err = res_f.terminal["D_hat"] - res_f.terminal["D"]
    summary = {
        "n_paths": n_paths,
        "horizon_s": horizon_s,
        "oracle_pnl_mean": float(res_o.terminal["mtm"].mean()),
        "oracle_pnl_std": float(res_o.terminal["mtm"].std(ddof=1)),
        "filtered_pnl_mean": float(res_f.terminal["mtm"].mean()),
        "filtered_pnl_std": float(res_f.terminal["mtm"].std(ddof=1)),
        "paired_diff_mean": float(diff.mean()),
        "paired_diff_se": float(diff.std(ddof=1) / np.sqrt(n_paths)),
        "terminal_dhat_mse": float(np.mean(dhat_err ** 2)),
        "asymptotic_variance": filtering.asymptotic_variance(params),
    }
    trace_header = ["t_s", "E", "D", "D_hat"]
    s = res_f.series
    trace = np.column_stack([s[:, 0] * dt * 86400.0, s[:, 2], s[:, 3], s[:, 4]]).tolist()
    return summary, trace, trace_header
