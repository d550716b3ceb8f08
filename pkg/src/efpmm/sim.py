"""Monte Carlo engine: correlated price paths, client fills, hedging, P&L.

``run_paths`` simulates an ensemble under the near-optimal controls; the
per-step hot loop runs in a compiled kernel when available (see
``kernels``).  Each step: controls from the boundary state, Euler price
update (Bernoulli-thinned client fills for every ladder size and side,
booked at the post-update spot), hedge flows at cost L(v), optional
filter advance from realized increments.  Mark-to-market P&L is
``X + q_S*S + q_F*(S+E)``; the terminal inventory penalty enters the
reported objective statistics as a cash adjustment at the horizon.

``step`` is the scalar reference implementation used by the accounting
tests; ``backtest`` replays recorded market prices as the exogenous
(S, E) path with simulated client flow; ``simulate_efp_exact`` generates
synthetic (S, E, D) with exact OU transitions for the filter and
calibration oracles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter

from . import filtering, kernels
from .flow import FillTable, OffsetTable, fill_probability
from .kernels import HistSpec, RawResult, SimPlan
from .params import Inventory, MarketState, ModelParams, covariance_matrix, validate
from .policy import ControlDecision
from .riccati import ValueApprox

__all__ = [
    "SimConfig",
    "SimResult",
    "StationaryStats",
    "ConfigError",
    "step",
    "run_paths",
    "stationary_stats",
    "verify_accounting",
    "read_market_csv",
    "backtest",
    "simulate_efp_exact",
]

SERIES_COLUMNS = ("step", "S", "E", "D", "D_hat", "q_S", "q_F", "X", "mtm",
                  "v_S", "v_F", "bid_top", "ask_top")
EVENT_COLUMNS = ("step", "side", "size_index", "offset", "spot")

TERMINAL_COLUMNS = ("q_S", "q_F", "X", "S", "E", "D", "D_hat", "mtm",
                    "mtm_penalized", "vol_client_bid", "vol_client_ask",
                    "vol_hedge_spot", "vol_hedge_futures", "n_fills", "n_clamped")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Simulation knobs (times in days, sizes in oz).

    ``mode`` selects what the policy sees: "oracle" feeds the true mean
    level D, "filtered" feeds the filtered estimate (and the caller is
    expected to have solved the Riccati system with the effective
    filtered covariance).  ``stationary_policy`` freezes the controls at
    their t=0 values, for runs much longer than the policy horizon.
    """

    horizon: float
    n_paths: int = 1
    dt: float = 1.0 / 86400.0
    seed: int = 0
    mode: str = "oracle"
    initial_state: MarketState | None = None
    initial_inventory: Inventory = field(default_factory=Inventory)
    d_hat0: float | None = None
    nu2_0: float | None = None
    stationary_policy: bool = False
    futures: bool = True
    filter_transient: bool = False
    track_step_sums: bool = False
    window_len: int = 0            # steps per P&L window; 0 disables marks
    hist: HistSpec | None = None
    series_stride: int = 0         # 0 disables series recording (path 0)
    events_cap: int = 0            # 0 disables event recording (path 0)

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.mode not in ("oracle", "filtered"):
            raise ConfigError("mode must be 'oracle' or 'filtered'")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))


def _check_thinning(params: ModelParams, dt: float) -> None:
    # Bernoulli thinning stays valid when the per-step arrival probability
    # at the most aggressive admissible quote is small.
    from .flow import QUOTE_FLOOR
    worst = float(max(params.lam) * fill_probability(QUOTE_FLOOR, params) * dt)
    if worst > 0.1:
        raise ConfigError(
            f"dt too coarse: per-step arrival probability {worst:.3f} > 0.1 "
            "at the quote floor")


@dataclass(frozen=True)
class Fill:
    side: str            # "bid" or "ask"
    size: float          # oz
    offset: float        # bp
    price: float         # bp (booked spot level +/- offset applied)


def step(
    state: MarketState,
    inventory: Inventory,
    decision: ControlDecision,
    rng: np.random.Generator,
    params: ModelParams,
    dt: float,
    draws: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[MarketState, Inventory, list[Fill]]:
    """Scalar reference step (the kernels are its vectorized equivalents).

    Order: Euler price update with correlated Gaussians; per-size/side
    Bernoulli fills booked at the post-update spot; hedge flows at the
    decision rates.  ``draws`` may supply (normals(3,), uniforms(2n,)) to
    replay a recorded stream; otherwise they come from ``rng`` in that
    canonical order.
    """
    n_sizes = len(params.ladder)
    if draws is None:
        normals = rng.standard_normal(3)
        uniforms = rng.random(2 * n_sizes)
    else:
        normals, uniforms = draws
    scal = kernels.pack_scalars(params, dt)
    S1 = state.S + scal[1] * normals[0]
    E1 = state.E - scal[7] * (state.E - state.D) \
        + scal[2] * normals[0] + scal[3] * normals[1]
    D1 = state.D - scal[8] * (state.D - params.D_bar) \
        + scal[4] * normals[0] + scal[5] * normals[1] + scal[6] * normals[2]

    q_S, q_F, X = inventory.q_S, inventory.q_F, inventory.X
    fills: list[Fill] = []
    for j, z in enumerate(params.ladder):
        prob_b = min(max(params.lam[j] * dt
                         * float(fill_probability(decision.bid_offsets[j], params)), 0.0), 1.0)
        prob_a = min(max(params.lam[j] * dt
                         * float(fill_probability(decision.ask_offsets[j], params)), 0.0), 1.0)
        if uniforms[2 * j] < prob_b:
            q_S += z
            X -= z * (S1 - decision.bid_offsets[j])
            fills.append(Fill("bid", z, decision.bid_offsets[j],
                              S1 - decision.bid_offsets[j]))
        if uniforms[2 * j + 1] < prob_a:
            q_S -= z
            X += z * (S1 + decision.ask_offsets[j])
            fills.append(Fill("ask", z, decision.ask_offsets[j],
                              S1 + decision.ask_offsets[j]))

    v_S, v_F = decision.v_S, decision.v_F
    q_S += v_S * dt
    q_F += v_F * dt
    # flat expression, same floating-point grouping as the kernels
    X -= (v_S * S1 + params.psi_S * abs(v_S) + params.eta_S * v_S * v_S
          + v_F * (S1 + E1) + params.psi_F * abs(v_F)
          + params.eta_F * v_F * v_F) * dt

    return (MarketState(t=state.t + dt, S=S1, E=E1, D=D1),
            Inventory(q_S=q_S, q_F=q_F, X=X),
            fills)


@dataclass
class SimResult:
    """Ensemble outputs of ``run_paths``/``backtest``."""

    config: SimConfig
    params: ModelParams
    terminal: dict[str, np.ndarray]
    step_sums: np.ndarray | None
    hist: np.ndarray | None
    moments: np.ndarray | None
    mtm_marks: np.ndarray | None
    series: np.ndarray | None
    events: np.ndarray | None
    events_truncated: bool
    kernel: str
    threads: int

    @property
    def n_paths(self) -> int:
        return len(self.terminal["q_S"])

    def step_means(self) -> dict[str, np.ndarray]:
        """Per-boundary ensemble means and standard errors (needs tracking)."""
        if self.step_sums is None:
            raise ValueError("run with track_step_sums=True")
        n = self.n_paths
        t = np.arange(self.step_sums.shape[0]) * self.config.dt
        m_s = self.step_sums[:, 0] / n
        m_f = self.step_sums[:, 1] / n
        var_s = np.maximum(self.step_sums[:, 2] / n - m_s ** 2, 0.0)
        var_f = np.maximum(self.step_sums[:, 3] / n - m_f ** 2, 0.0)
        cov = self.step_sums[:, 4] / n - m_s * m_f
        var_net = np.maximum(var_s + var_f + 2.0 * cov, 0.0)
        return {
            "t": t,
            "mean_q_S": m_s,
            "mean_q_F": m_f,
            "mean_q_net": m_s + m_f,
            "se_q_S": np.sqrt(var_s / n),
            "se_q_F": np.sqrt(var_f / n),
            "se_q_net": np.sqrt(var_net / n),
        }

    def volume_shares(self) -> dict[str, float]:
        """Traded oz by channel divided by the total; sums to 1."""
        t = self.terminal
        vols = {
            "client_bid": float(t["vol_client_bid"].sum()),
            "client_ask": float(t["vol_client_ask"].sum()),
            "hedge_spot": float(t["vol_hedge_spot"].sum()),
            "hedge_futures": float(t["vol_hedge_futures"].sum()),
        }
        total = sum(vols.values())
        if total == 0.0:
            return {k: 0.0 for k in vols} | {"total_oz": 0.0}
        return {k: v / total for k, v in vols.items()} | {"total_oz": total}

    def inventory_correlation(self) -> float:
        """corr(q_S, q_F) over the sampled stationary distribution."""
        if self.moments is None or self.moments[0] < 2:
            raise ValueError("run with a histogram spec to sample moments")
        n, s1, s2, s11, s22, s12 = self.moments
        v1 = s11 / n - (s1 / n) ** 2
        v2 = s22 / n - (s2 / n) ** 2
        c = s12 / n - (s1 / n) * (s2 / n)
        return float(c / math.sqrt(max(v1 * v2, 1e-300)))

    def window_pnl(self, discard: int = 0) -> np.ndarray:
        """Per-window MtM increments, first ``discard`` windows dropped."""
        if self.mtm_marks is None:
            raise ValueError("run with window_len > 0")
        mtm0 = self.terminal["mtm0"][:, None]
        marks = np.concatenate([mtm0, self.mtm_marks], axis=1)
        pnl = np.diff(marks, axis=1)
        return pnl[:, discard:]


def _build_plan(config: SimConfig, params: ModelParams, va: ValueApprox,
                exo: tuple[np.ndarray, np.ndarray] | None = None) -> SimPlan:
    validate(params)
    _check_thinning(params, config.dt)
    n_steps = config.n_steps
    state0 = config.initial_state or MarketState(t=0.0, D=params.D_bar)
    inv0 = config.initial_inventory

    if config.stationary_policy:
        coeffs = va.policy_rows(np.array([0.0]))
        stride = 0
    else:
        horizon = n_steps * config.dt
        if horizon > va.T * (1.0 + 1e-9) + 1e-12:
            raise ConfigError(
                f"horizon {horizon} exceeds the policy horizon {va.T}; "
                "set stationary_policy=True for long runs")
        times = np.minimum(np.arange(n_steps + 1) * config.dt, va.T)
        coeffs = va.policy_rows(times)
        stride = 1

    filtered = config.mode == "filtered"
    nu2_inf = filtering.asymptotic_variance(params)
    if filtered and config.filter_transient:
        nu2 = config.nu2_0 if config.nu2_0 is not None else nu2_inf
        gains = np.empty(n_steps + 1)
        for i in range(n_steps + 1):
            gains[i] = filtering.filter_gain(params, nu2)
            nu2 = filtering.variance_ode_step(nu2, params, config.dt)
        gain_stride = 1
    else:
        nu2 = config.nu2_0 if config.nu2_0 is not None else nu2_inf
        gains = np.array([filtering.filter_gain(params, nu2)])
        gain_stride = 0

    if exo is not None:
        exo_S, exo_E = exo
        if len(exo_S) != n_steps + 1 or len(exo_E) != n_steps + 1:
            raise ConfigError("exogenous price arrays must have n_steps+1 samples")
        exogenous = True
    else:
        exo_S = exo_E = np.zeros(0)
        exogenous = False

    d_hat0 = config.d_hat0 if config.d_hat0 is not None else params.D_bar
    x0 = np.array([state0.S, state0.E, state0.D, d_hat0,
                   inv0.q_S, inv0.q_F, inv0.X])
    return SimPlan(
        n_paths=config.n_paths,
        n_steps=n_steps,
        seed=config.seed,
        coeffs=coeffs,
        coeff_stride=stride,
        gains=gains,
        gain_stride=gain_stride,
        offsets=OffsetTable.build(params),
        fills=FillTable.build(params),
        sizes=np.asarray(params.ladder, dtype=float),
        lam_dt=np.asarray(params.lam, dtype=float) * config.dt,
        scal=kernels.pack_scalars(params, config.dt),
        filtered=filtered,
        exogenous=exogenous,
        futures_on=config.futures,
        exo_S=np.ascontiguousarray(exo_S, dtype=float),
        exo_E=np.ascontiguousarray(exo_E, dtype=float),
        x0=x0,
        track_step_sums=config.track_step_sums,
        hist=config.hist,
        window_len=config.window_len,
        series_stride=config.series_stride,
        events_cap=config.events_cap,
    )


def _wrap(raw: RawResult, config: SimConfig, params: ModelParams) -> SimResult:
    st, acc = raw.state, raw.acc
    mtm = st[:, 6] + st[:, 4] * st[:, 0] + st[:, 5] * (st[:, 0] + st[:, 1])
    penal = mtm - params.K_S * st[:, 4] ** 2 - params.K_F * st[:, 5] ** 2
    state0 = config.initial_state or MarketState(t=0.0, D=params.D_bar)
    inv0 = config.initial_inventory
    mtm0 = inv0.X + inv0.q_S * state0.S + inv0.q_F * (state0.S + state0.E)
    terminal = {
        "q_S": st[:, 4], "q_F": st[:, 5], "X": st[:, 6],
        "S": st[:, 0], "E": st[:, 1], "D": st[:, 2], "D_hat": st[:, 3],
        "mtm": mtm, "mtm_penalized": penal,
        "mtm0": np.full(len(mtm), mtm0),
        "vol_client_bid": acc[:, 0], "vol_client_ask": acc[:, 1],
        "vol_hedge_spot": acc[:, 2], "vol_hedge_futures": acc[:, 3],
        "n_fills": acc[:, 4], "n_clamped": acc[:, 5],
    }
    return SimResult(
        config=config, params=params, terminal=terminal,
        step_sums=raw.step_sums, hist=raw.hist, moments=raw.moments,
        mtm_marks=raw.mtm_marks, series=raw.series, events=raw.events,
        events_truncated=raw.events_truncated,
        kernel=raw.kernel, threads=raw.threads)


def run_paths(config: SimConfig, params: ModelParams, va: ValueApprox) -> SimResult:
    """Simulate the ensemble; deterministic given (config, seed)."""
    plan = _build_plan(config, params, va)
    return _wrap(kernels.simulate(plan), config, params)


@dataclass(frozen=True)
class StationaryStats:
    hist: np.ndarray
    hist_edges_q_S: np.ndarray
    hist_edges_q_F: np.ndarray
    volume_shares: dict[str, float]
    hourly_pnl_mean: float
    hourly_pnl_std: float
    inventory_correlation: float
    modal_bin: tuple[float, float]

    def modal_bin_on_diagonal(self, tol_bins: float = 1.0) -> bool:
        """Is the histogram mode within tol bins of the q_S = -q_F diagonal?"""
        w = max(abs(self.hist_edges_q_S[1] - self.hist_edges_q_S[0]),
                abs(self.hist_edges_q_F[1] - self.hist_edges_q_F[0]))
        return abs(self.modal_bin[0] + self.modal_bin[1]) <= tol_bins * w + 1e-9


def stationary_stats(result: SimResult, discard_windows: int = 1) -> StationaryStats:
    """Inventory distribution, volume shares and windowed P&L moments."""
    if result.hist is None or result.config.hist is None:
        raise ValueError("run with a histogram spec")
    spec = result.config.hist
    e1 = spec.lo1 + spec.width1 * np.arange(spec.n1 + 1)
    e2 = spec.lo2 + spec.width2 * np.arange(spec.n2 + 1)
    pnl = result.window_pnl(discard=discard_windows).ravel()
    i1, i2 = np.unravel_index(int(result.hist.argmax()), result.hist.shape)
    modal = (spec.lo1 + spec.width1 * (i1 + 0.5), spec.lo2 + spec.width2 * (i2 + 0.5))
    return StationaryStats(
        hist=result.hist,
        hist_edges_q_S=e1,
        hist_edges_q_F=e2,
        volume_shares=result.volume_shares(),
        hourly_pnl_mean=float(pnl.mean()),
        hourly_pnl_std=float(pnl.std(ddof=1)),
        inventory_correlation=result.inventory_correlation(),
        modal_bin=modal,
    )


def verify_accounting(result: SimResult, params: ModelParams) -> float:
    """Replay cash from a stride-1 series plus events; max relative error.

    Recomputes X and the mark-to-market identity at every step from the
    recorded fills and hedge rates; the kernels book the same flows, so
    the residual is at accumulation-rounding level.
    """
    if result.series is None or result.config.series_stride != 1 or result.events is None:
        raise ValueError("run with series_stride=1 and events_cap > 0")
    if result.events_truncated:
        raise ValueError("event buffer overflowed; raise events_cap")
    s = result.series
    ev = result.events
    dt = result.config.dt
    n = s.shape[0] - 1
    ladder = np.asarray(params.ladder)
    X = s[0, 7]
    scale = max(1.0, float(np.max(np.abs(s[:, 7]))))
    worst = 0.0
    ev_i = 0
    for g in range(n):
        S1, E1 = s[g + 1, 1], s[g + 1, 2]
        while ev_i < len(ev) and ev[ev_i, 0] == g:
            _, side, jm, off, spot_booked = ev[ev_i]
            z = ladder[int(jm)]
            assert spot_booked == S1
            if side == 0.0:
                X -= z * (S1 - off)
            else:
                X += z * (S1 + off)
            ev_i += 1
        v_S, v_F = s[g, 9], s[g, 10]
        X -= (v_S * S1 + params.psi_S * abs(v_S) + params.eta_S * v_S * v_S
              + v_F * (S1 + E1) + params.psi_F * abs(v_F)
              + params.eta_F * v_F * v_F) * dt
        worst = max(worst, abs(X - s[g + 1, 7]) / scale)
        X = s[g + 1, 7]
        mtm = s[g + 1, 7] + s[g + 1, 5] * S1 + s[g + 1, 6] * (S1 + E1)
        worst = max(worst, abs(mtm - s[g + 1, 8]) / max(1.0, abs(mtm)))
    return worst


# ---------------------------------------------------------------------------
# Exogenous-price backtest
# ---------------------------------------------------------------------------

def read_market_csv(path, dt: float = 1.0 / 86400.0,
                    max_gap_s: float = 60.0) -> tuple[np.ndarray, np.ndarray]:
    """Load and resample a market CSV onto a uniform dt grid.

    Header must be ``timestamp_s,spot_bp,efp_bp`` or
    ``timestamp_s,spot_bp,futures_bp`` (EFP derived as futures - spot).
    Timestamps must be strictly increasing with gaps below ``max_gap_s``
    seconds; prices are carried forward between observations.
    """
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["timestamp_s", "spot_bp"] or len(header) != 3 \
                or header[2] not in ("efp_bp", "futures_bp"):
            raise ConfigError(
                "market CSV header must be timestamp_s,spot_bp,efp_bp "
                "or timestamp_s,spot_bp,futures_bp")
        rows = np.array([[float(v) for v in row] for row in reader])
    if len(rows) < 2:
        raise ConfigError("market CSV needs at least two rows")
    ts = rows[:, 0]
    gaps = np.diff(ts)
    if np.any(gaps <= 0):
        raise ConfigError("timestamps must be strictly increasing")
    if np.any(gaps > max_gap_s):
        raise ConfigError(f"gap of {gaps.max():.1f}s exceeds {max_gap_s}s")
    spot = rows[:, 1]
    efp = rows[:, 2] - spot if header[2] == "futures_bp" else rows[:, 2]
    dt_s = dt * 86400.0
    n = int(math.floor((ts[-1] - ts[0]) / dt_s))
    grid = ts[0] + dt_s * np.arange(n + 1)
    idx = np.searchsorted(ts, grid, side="right") - 1
    return spot[idx], efp[idx]


def backtest(
    exo_S: np.ndarray,
    exo_E: np.ndarray,
    config: SimConfig,
    params: ModelParams,
    va: ValueApprox,
) -> SimResult:
    """Replay recorded prices as the exogenous path (no impact feedback).

    Client fills and hedges simulate exactly as in ``run_paths``; the
    filter runs on the observed increments in filtered mode.
    """
    exo_S = np.asarray(exo_S, dtype=float)
    exo_E = np.asarray(exo_E, dtype=float)
    n_steps = len(exo_S) - 1
    config = replace(config,
                     horizon=n_steps * config.dt,
                     initial_state=MarketState(t=0.0, S=float(exo_S[0]),
                                               E=float(exo_E[0]),
                                               D=params.D_bar))
    plan = _build_plan(config, params, va, exo=(exo_S, exo_E))
    return _wrap(kernels.simulate(plan), config, params)


# ---------------------------------------------------------------------------
# Exact-transition synthetic market data (filter/calibration oracles)
# ---------------------------------------------------------------------------

def simulate_efp_exact(
    params: ModelParams,
    n_steps: int,
    dt: float,
    seed: int = 0,
    x0: MarketState | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(S, E, D) sampled from the exact joint Gaussian transition.

    The one-step map of the linear SDE is Y' = Phi Y + c + noise with
    noise covariance from the Van Loan block-exponential construction;
    the recursion runs through IIR filters, so 30-day 1-second paths are
    cheap.  Used by the filter and calibration oracles, where transition
    bias would contaminate the comparison.
    """
    validate(params)
    x0 = x0 or MarketState(t=0.0, D=params.D_bar)
    F = np.array([[0.0, 0.0, 0.0],
                  [0.0, -params.k_E, params.k_E],
                  [0.0, 0.0, -params.k_D]])
    b = np.array([0.0, 0.0, params.k_D * params.D_bar])
    W = covariance_matrix(params)

    # Van Loan: exp([[-F, W], [0, F^T]] h) -> Phi = M22^T, Q = Phi @ M12.
    blk = np.zeros((6, 6))
    blk[:3, :3] = -F
    blk[:3, 3:] = W
    blk[3:, 3:] = F.T
    eb = expm(blk * dt)
    Phi = eb[3:, 3:].T
    Q = Phi @ eb[:3, 3:]
    Q = 0.5 * (Q + Q.T)
    # affine part: exp([[F, b], [0, 0]] h) top-right column
    aug = np.zeros((4, 4))
    aug[:3, :3] = F
    aug[:3, 3] = b
    c = expm(aug * dt)[:3, 3]

    evals, evecs = np.linalg.eigh(Q)
    L = evecs @ np.diag(np.sqrt(np.maximum(evals, 0.0)))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n_steps, 3)) @ L.T

    # D is autonomous AR(1); E feeds on D; S accumulates its noise.
    D = np.empty(n_steps + 1)
    D[0] = x0.D
    uD = c[2] + noise[:, 2]
    D[1:] = lfilter([1.0], [1.0, -Phi[2, 2]], uD, zi=np.array([Phi[2, 2] * D[0]]))[0]
    E = np.empty(n_steps + 1)
    E[0] = x0.E
    uE = Phi[1, 2] * D[:-1] + c[1] + noise[:, 1]
    E[1:] = lfilter([1.0], [1.0, -Phi[1, 1]], uE, zi=np.array([Phi[1, 1] * E[0]]))[0]
    S = np.empty(n_steps + 1)
    S[0] = x0.S
    S[1:] = x0.S + np.cumsum(noise[:, 0])
    return S, E, D
