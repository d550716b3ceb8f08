"""Command-line interface: solve, simulate, and emit plot-ready datasets.

Usage: ``efpmm <command> --config <path.json> [--seed N] [--out DIR]``.

Every command reads a JSON config carrying the model parameters (inline
under "params" or via "params_file") plus command-specific knobs, writes
its CSV/JSON outputs into the output directory, and drops a
``manifest.json`` recording parameters, seed, package versions, active
kernel and wall time.  Data outputs are deterministic given
(config, seed).

Exit codes: 0 success, 1 numerical failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__, experiments, filtering, kernels, sim
from .filtering import CalibrationError
from .flow import QuoteSolverError
from .params import ModelParams, ParamError, load_params, params_from_dict, params_to_dict
from .riccati import RiccatiBlowupError
from .sim import ConfigError

_COMMANDS = {}


def _command(name, knobs):
    def wrap(fn):
        _COMMANDS[name] = (fn, frozenset(knobs))
        return fn
    return wrap


def _write_csv(path: Path, rows, header) -> None:
    # repr() floats round-trip exactly, keeping regenerated figures identical
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path: str, seed_override: int | None):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "params" in cfg:
        params = params_from_dict(cfg["params"])
    elif "params_file" in cfg:
        params = load_params(Path(path).parent / cfg["params_file"])
    else:
        raise ConfigError("config needs 'params' or 'params_file'")
    seed = int(cfg.get("seed", 0)) if seed_override is None else seed_override
    return cfg, params, seed


def _grid(cfg: dict, key: str, lo: float, hi: float, n: int) -> np.ndarray:
    g = cfg.get(key, {})
    return np.linspace(float(g.get("min", lo)), float(g.get("max", hi)),
                       int(g.get("n", n)))


@_command("solve", {"dt_max", "filtered", "futures"})
def _cmd_solve(cfg, params, seed, out):
    va = experiments.solve_value(
        params, dt_max=float(cfg.get("dt_max", 1e-5)),
        filtered=bool(cfg.get("filtered", False)),
        futures=bool(cfg.get("futures", True)))
    va.to_csv(out / "value_approx.csv")
    return ["value_approx.csv"]


@_command("ladder", {"q_S", "q_F", "E", "D", "dt_max"})
def _cmd_ladder(cfg, params, seed, out):
    va = experiments.solve_value(params, dt_max=float(cfg.get("dt_max", 1e-5)))
    rows, header = experiments.ladder_scan(
        params, va, _grid(cfg, "q_S", -6000.0, 6000.0, 241),
        q_F=float(cfg.get("q_F", 0.0)), E=float(cfg.get("E", 0.0)),
        D=float(cfg.get("D", 0.0)))
    _write_csv(out / "ladder.csv", rows, header)
    return ["ladder.csv"]


@_command("relax", {"n_paths", "q_S0", "dt_max"})
def _cmd_relax(cfg, params, seed, out):
    va = experiments.solve_value(params, dt_max=float(cfg.get("dt_max", 1e-5)))
    rows, header, _ = experiments.relaxation(
        params, va, q_S0=float(cfg.get("q_S0", 1000.0)),
        n_paths=int(cfg.get("n_paths", 20000)), seed=seed)
    _write_csv(out / "relaxation.csv", rows, header)
    return ["relaxation.csv"]


@_command("zones", {"gammas", "eps", "q_F", "D", "dt_max"})
def _cmd_zones(cfg, params, seed, out):
    written = []
    eps = _grid(cfg, "eps", -3.0, 3.0, 121)
    for g in cfg.get("gammas", [1e-3, 1e-4]):
        p = params.replace(gamma=float(g))
        va = experiments.solve_value(p, dt_max=float(cfg.get("dt_max", 1e-5)))
        rows, header = experiments.zone_boundaries(
            p, va, eps, q_F=float(cfg.get("q_F", 0.0)),
            D=float(cfg.get("D", 0.0)))
        name = f"zones_gamma{g:g}.csv"
        _write_csv(out / name, rows, header)
        written.append(name)
    return written


@_command("skewmap", {"gammas", "efp", "eps", "size", "dt_max"})
def _cmd_skewmap(cfg, params, seed, out):
    written = []
    efp = _grid(cfg, "efp", -5000.0, 5000.0, 41)
    eps = _grid(cfg, "eps", -3.0, 3.0, 25)
    for g in cfg.get("gammas", [1e-3, 1e-4]):
        p = params.replace(gamma=float(g))
        va = experiments.solve_value(p, dt_max=float(cfg.get("dt_max", 1e-5)))
        rows, header = experiments.skew_map(
            p, va, efp, eps, z=cfg.get("size"))
        name = f"skew_gamma{g:g}.csv"
        _write_csv(out / name, rows, header)
        written.append(name)
    return written


@_command("nested-sweep", {"ratios", "eps", "dt_max"})
def _cmd_nested_sweep(cfg, params, seed, out):
    ratios = np.asarray(cfg.get("ratios", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2]))
    rows, header = experiments.nested_sweep(
        params, ratios, eps=float(cfg.get("eps", 1.0)),
        dt_max=float(cfg.get("dt_max", 1e-5)))
    _write_csv(out / "nested_sweep.csv", rows, header)
    return ["nested_sweep.csv"]


@_command("frontier", {"gammas", "n_paths", "horizon_s", "dt_max"})
def _cmd_frontier(cfg, params, seed, out):
    gammas = np.asarray(cfg.get("gammas",
                                np.geomspace(1e-5, 1e-2, 7).tolist()))
    rows, header = experiments.risk_frontier(
        params, gammas, n_paths=int(cfg.get("n_paths", 8)),
        horizon_s=float(cfg.get("horizon_s", 200000.0)), seed=seed,
        dt_max=float(cfg.get("dt_max", 1e-5)))
    pnl_std = [r[6] for r in rows]
    if any(b > a * (1 + 1e-9) for a, b in zip(pnl_std, pnl_std[1:])):
        print("note: hourly P&L std not monotone in gamma at this MC size",
              file=sys.stderr)
    _write_csv(out / "frontier.csv", rows, header)
    return ["frontier.csv"]


@_command("spread-compare", {"q_S_values", "q_S", "dt_max"})
def _cmd_spread_compare(cfg, params, seed, out):
    size_rows, size_header, top_rows, top_header = experiments.spread_comparison(
        params, q_S_values=tuple(cfg.get("q_S_values", [0.0, 2500.0])),
        q_S_grid=_grid(cfg, "q_S", -4000.0, 4000.0, 81),
        dt_max=float(cfg.get("dt_max", 1e-5)))
    _write_csv(out / "spread_by_size.csv", size_rows, size_header)
    _write_csv(out / "spread_top_of_book.csv", top_rows, top_header)
    return ["spread_by_size.csv", "spread_top_of_book.csv"]


@_command("backtest", {"market_csv", "max_gap_s", "mode", "series_stride",
                       "intensity_scale", "dt_max"})
def _cmd_backtest(cfg, params, seed, out):
    if "market_csv" not in cfg:
        raise ConfigError("backtest config needs 'market_csv'")
    scale = float(cfg.get("intensity_scale", 1.0))
    if scale != 1.0:
        params = params.replace(lam=tuple(scale * v for v in params.lam))
    mode = cfg.get("mode", "filtered")
    va = experiments.solve_value(params, dt_max=float(cfg.get("dt_max", 1e-5)),
                                 filtered=(mode == "filtered"))
    exo_S, exo_E = sim.read_market_csv(
        Path(cfg["market_csv"]), max_gap_s=float(cfg.get("max_gap_s", 60.0)))
    config = sim.SimConfig(
        horizon=1.0, n_paths=1, seed=seed, mode=mode,
        stationary_policy=True,
        series_stride=int(cfg.get("series_stride", 1)),
        events_cap=200000, window_len=3600)
    res = sim.backtest(exo_S, exo_E, config, params, va)
    rows = res.series.tolist()
    _write_csv(out / "backtest_series.csv", rows, sim.SERIES_COLUMNS)
    pnl = res.window_pnl(discard=0).ravel()
    sharpe = float(pnl.mean() / pnl.std(ddof=1)) if len(pnl) > 1 and pnl.std(ddof=1) > 0 else 0.0
    summary = {
        "terminal_mtm": float(res.terminal["mtm"][0]),
        "volume_shares": res.volume_shares(),
        "hourly_sharpe": sharpe,
        "n_fills": float(res.terminal["n_fills"][0]),
        "mode": mode,
    }
    _write_json(out / "backtest_summary.json", summary)
    return ["backtest_series.csv", "backtest_summary.json"]


@_command("filter-demo", {"horizon_s", "n_paths"})
def _cmd_filter_demo(cfg, params, seed, out):
    summary, trace, trace_header = experiments.filter_demo(
        params, horizon_s=float(cfg.get("horizon_s", 7200.0)),
        n_paths=int(cfg.get("n_paths", 512)), seed=seed)
    _write_json(out / "filter_demo.json", summary)
    _write_csv(out / "filter_trace.csv", trace, trace_header)
    return ["filter_demo.json", "filter_trace.csv"]


@_command("calibrate", {"efp_csv", "lags_s"})
def _cmd_calibrate(cfg, params, seed, out):
    if "efp_csv" not in cfg:
        raise ConfigError("calibrate config needs 'efp_csv'")
    try:
        data = np.genfromtxt(cfg["efp_csv"], delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError(f"cannot read {cfg['efp_csv']}: {exc}") from exc
    names = data.dtype.names
    if names is None or list(names) != ["timestamp_seconds", "efp_bp"]:
        raise ConfigError("EFP CSV header must be timestamp_seconds,efp_bp")
    ts = np.asarray(data["timestamp_seconds"], dtype=float)
    steps = np.diff(ts)
    if len(steps) == 0 or np.any(np.abs(steps - steps[0]) > 1e-9 * max(1.0, steps[0])):
        raise ConfigError("EFP CSV must be uniformly sampled")
    spacing_day = steps[0] / 86400.0
    lags = cfg.get("lags_s")
    lag_idx = None if lags is None else np.asarray(
        [int(round(s / steps[0])) for s in lags], dtype=np.int64)
    res = filtering.calibrate_efp(np.asarray(data["efp_bp"], dtype=float),
                                  spacing_day, params, lags=lag_idx)
    _write_json(out / "calibration.json", {
        "k_E": res.k_E, "sigma_E": res.sigma_E, "k_D": res.k_D,
        "sigma_D": res.sigma_D, "D_bar": res.D_bar,
        "objective": res.objective, "n_iter": res.n_iter})
    return ["calibration.json"]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="efpmm",
        description="Spot metals market making: solve, simulate, emit figure data")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None,
                        help="output directory (default ./efpmm_<command>)")
    args = parser.parse_args(argv)

    t0 = time.time()
    try:
        cfg, params, seed = _load_config(args.config, args.seed)
        fn, allowed = _COMMANDS[args.command]
        unknown = set(cfg) - allowed - {"params", "params_file", "seed"}
        if unknown:
            raise ConfigError(
                f"unknown config keys for {args.command}: {sorted(unknown)}")
        out = Path(args.out or f"efpmm_{args.command}")
        out.mkdir(parents=True, exist_ok=True)
        outputs = fn(cfg, params, seed, out)
    except (ConfigError, ParamError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RiccatiBlowupError, QuoteSolverError, CalibrationError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected; treat as numerical failure
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    manifest = {
        "command": args.command,
        "config": {k: v for k, v in cfg.items() if k != "params"}
                  | {"params": params_to_dict(params)},
        "seed": seed,
        "outputs": outputs,
        "versions": {"efpmm": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
        "kernel": kernels.active_kernel_name(),
        "threads": kernels.thread_count(),
        "wall_time_s": round(time.time() - t0, 3),
        "written_at": datetime.now(timezone.utc).isoformat(),
    }
    _write_json(out / "manifest.json", manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
