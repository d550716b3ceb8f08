"""Simulation kernel selection and the multi-threaded path orchestrator.

Two interchangeable kernels advance blocks of Monte Carlo paths: the
compiled extension ``efpmm._speedup`` (preferred) and the pure-numpy
fallback ``efpmm._kernel_ref``.  Selection happens at import; the
``EFPMM_KERNEL`` environment variable ("cython" or "python") overrides
it, and ``EFPMM_THREADS`` caps the worker count (default: hardware
parallelism).

Determinism contract:

* every path owns a counter-based Philox substream keyed by
  (seed, path index); per path and per chunk, the stream yields the
  price normals first, then the fill uniforms;
* the step-chunk length is a fixed constant, so draw order never depends
  on memory pressure, thread count or kernel choice;
* paths are dispatched in fixed blocks and all cross-path reductions are
  performed in block order, so results are bit-identical across thread
  counts (per-path outputs are additionally bit-identical across the two
  kernels; block-level floating-point reductions may differ between
  kernels at rounding level because their accumulation order differs).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernel_ref
from .flow import QUOTE_FLOOR, FillTable, OffsetTable
from .params import ModelParams, correlation_cholesky, correlation_matrix

try:
    from . import _speedup
except ImportError:  # extension not built; fall back to numpy
    _speedup = None

__all__ = [
    "RNG_CHUNK",
    "SimPlan",
    "HistSpec",
    "RawResult",
    "available_kernels",
    "active_kernel_name",
    "thread_count",
    "pack_scalars",
    "path_generator",
    "draw_chunk",
    "simulate",
]

RNG_CHUNK = 4096          # steps per RNG chunk; fixed, part of determinism
_BLOCK = {"cython": 64, "python": 128}   # paths per dispatch block

NSCAL = 21


def available_kernels() -> list[str]:
    return (["cython"] if _speedup is not None else []) + ["python"]

def active_kernel_name() -> str:
    """Kernel in effect: EFPMM_KERNEL override or best available."""
    env = os.environ.get("EFPMM_KERNEL", "").strip().lower()
    if env:
        if env not in ("cython", "python"):
            raise ValueError(f"EFPMM_KERNEL must be 'cython' or 'python', got {env!r}")
        if env == "cython" and _speedup is None:
            raise RuntimeError("EFPMM_KERNEL=cython but the compiled kernel is not built")
        return env
    return "cython" if _speedup is not None else "python"


def _kernel_module(name: str):
    return _speedup if name == "cython" else _kernel_ref


def thread_count() -> int:
    env = os.environ.get("EFPMM_THREADS", "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("EFPMM_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def pack_scalars(params: ModelParams, dt: float) -> np.ndarray:
    """Pack per-step constants; layout shared with both kernels.

    [0] dt  [1] sig_S*sqrt(dt)  [2:4] E-noise loadings  [4:7] D-noise
    loadings (rows of sigma*chol(R)*sqrt(dt))  [7] k_E*dt  [8] k_D*dt
    [9] D_bar  [10:13] spot cost (psi, 1/(2 eta), eta)  [13:16] futures
    cost  [16] rho  [17] 1/sig_S  [18] 1/sig_E  [19] 1/sqrt(1-rho^2)
    [20] quote floor.
    """
    L = correlation_cholesky(correlation_matrix(params))
    sqdt = math.sqrt(dt)
    scal = np.empty(NSCAL)
    scal[0] = dt
    scal[1] = params.sigma_S * sqdt
    scal[2] = params.sigma_E * sqdt * L[1, 0]
    scal[3] = params.sigma_E * sqdt * L[1, 1]
    scal[4] = params.sigma_D * sqdt * L[2, 0]
    scal[5] = params.sigma_D * sqdt * L[2, 1]
    scal[6] = params.sigma_D * sqdt * L[2, 2]
    scal[7] = params.k_E * dt
    scal[8] = params.k_D * dt
    scal[9] = params.D_bar
    scal[10] = params.psi_S
    scal[11] = 1.0 / (2.0 * params.eta_S)
    scal[12] = params.eta_S
    scal[13] = params.psi_F
    scal[14] = 1.0 / (2.0 * params.eta_F)
    scal[15] = params.eta_F
    scal[16] = params.rho
    scal[17] = 1.0 / params.sigma_S
    scal[18] = 1.0 / params.sigma_E
    scal[19] = 1.0 / math.sqrt(1.0 - params.rho ** 2)
    scal[20] = QUOTE_FLOOR
    return scal


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based substream for one path."""
    return np.random.Generator(np.random.Philox(key=[seed, path_index]))


def draw_chunk(gen: np.random.Generator, chunk: int, n_sizes: int):
    """One chunk of draws in the canonical order: normals, then uniforms."""
    return (gen.standard_normal((chunk, 3)),
            gen.random((chunk, 2 * n_sizes)))


@dataclass(frozen=True)
class HistSpec:
    """Inventory histogram spec: fixed bins over (q_S, q_F)."""

    lo1: float
    width1: float
    n1: int
    lo2: float
    width2: float
    n2: int
    stride: int = 1
    sample_start: int = 0


@dataclass
class SimPlan:
    """Everything a kernel needs, as plain arrays and flags."""

    n_paths: int
    n_steps: int
    seed: int
    coeffs: np.ndarray          # (n_rows, 11)
    coeff_stride: int           # 1 per step rows, 0 stationary
    gains: np.ndarray           # (n_gains,)
    gain_stride: int
    offsets: OffsetTable
    fills: FillTable
    sizes: np.ndarray
    lam_dt: np.ndarray
    scal: np.ndarray
    filtered: bool
    exogenous: bool
    futures_on: bool
    exo_S: np.ndarray           # (n_steps+1,) or (0,)
    exo_E: np.ndarray
    x0: np.ndarray              # (7,) [S, E, D, Dhat, qS, qF, X]
    track_step_sums: bool = False
    hist: HistSpec | None = None
    window_len: int = 0
    series_stride: int = 0
    events_cap: int = 0


@dataclass
class RawResult:
    """Raw kernel outputs; ``sim`` wraps these into result objects."""

    state: np.ndarray           # (n_paths, 7)
    acc: np.ndarray             # (n_paths, 7): volumes, fills, clamps
    step_sums: np.ndarray | None
    hist: np.ndarray | None
    moments: np.ndarray | None
    mtm_marks: np.ndarray | None
    series: np.ndarray | None
    events: np.ndarray | None
    events_truncated: bool
    kernel: str
    threads: int


_D2 = np.zeros((1, 1))
_D3 = np.zeros((1, 1, 1))
_DI = np.zeros((1, 1), dtype=np.int64)


def simulate(plan: SimPlan) -> RawResult:
    """Run all paths of a plan and reduce block partials in fixed order."""
    name = active_kernel_name()
    kern = _kernel_module(name)
    block = _BLOCK[name]
    threads = thread_count()
    n_paths, n_steps = plan.n_paths, plan.n_steps
    n_sizes = len(plan.sizes)

    state = np.tile(plan.x0, (n_paths, 1))
    acc = np.zeros((n_paths, 7))
    hist_spec = plan.hist
    n_marks = n_steps // plan.window_len if plan.window_len > 0 else 0
    marks = np.zeros((n_paths, max(n_marks, 1))) if plan.window_len > 0 else None
    n_series = (n_steps // plan.series_stride + 1) if plan.series_stride > 0 else 0
    series = np.zeros((max(n_series, 1), 13)) if plan.series_stride > 0 else None
    events = np.zeros((max(plan.events_cap, 1), 5)) if plan.events_cap > 0 else None
    ev_count = np.zeros(1, dtype=np.int64)

    n_blocks = (n_paths + block - 1) // block
    sums_parts: list[np.ndarray | None] = [None] * n_blocks
    hist_parts: list[np.ndarray | None] = [None] * n_blocks
    mom_parts: list[np.ndarray | None] = [None] * n_blocks

    def run_block(bi: int):
        p0 = bi * block
        p1 = min(n_paths, p0 + block)
        npb = p1 - p0
        local_sums = np.zeros((n_steps + 1, 5)) if plan.track_step_sums else _D2
        if hist_spec is not None:
            local_hist = np.zeros((hist_spec.n1, hist_spec.n2), dtype=np.int64)
            local_mom = np.zeros(6)
        else:
            local_hist, local_mom = _DI, np.zeros(6)
        first = p0 == 0
        blk_series = series if (first and series is not None) else _D2
        blk_events = events if (first and events is not None) else _D2
        blk_marks = marks[p0:p1] if marks is not None else _D2
        gens = [path_generator(plan.seed, p) for p in range(p0, p1)]
        step0 = 0
        while step0 < n_steps:
            c = min(RNG_CHUNK, n_steps - step0)
            normals = np.empty((npb, c, 3))
            uniforms = np.empty((npb, c, 2 * n_sizes))
            for k, gen in enumerate(gens):
                normals[k], uniforms[k] = draw_chunk(gen, c, n_sizes)
            kern.run_chunk(
                plan.coeffs, plan.coeff_stride,
                plan.gains, plan.gain_stride,
                plan.offsets.coeffs, plan.offsets.p0, plan.offsets.h,
                plan.fills.coeffs, plan.fills.d0, plan.fills.h,
                plan.sizes, plan.lam_dt,
                plan.scal,
                int(plan.filtered), int(plan.exogenous), int(plan.futures_on),
                plan.exo_S, plan.exo_E,
                normals, uniforms,
                step0, n_steps, int(step0 + c == n_steps),
                state[p0:p1], acc[p0:p1],
                int(plan.track_step_sums), local_sums,
                int(hist_spec is not None), local_hist,
                hist_spec.stride if hist_spec else 1,
                hist_spec.sample_start if hist_spec else 0,
                hist_spec.lo1 if hist_spec else 0.0,
                1.0 / hist_spec.width1 if hist_spec else 1.0,
                hist_spec.lo2 if hist_spec else 0.0,
                1.0 / hist_spec.width2 if hist_spec else 1.0,
                local_mom,
                plan.window_len if plan.window_len > 0 else 0, blk_marks,
                plan.series_stride if first else 0, blk_series,
                plan.events_cap if first else 0, blk_events, ev_count,
            )
            step0 += c
        sums_parts[bi] = local_sums if plan.track_step_sums else None
        hist_parts[bi] = local_hist if hist_spec is not None else None
        mom_parts[bi] = local_mom if hist_spec is not None else None

    if threads == 1 or n_blocks == 1:
        for bi in range(n_blocks):
            run_block(bi)
    else:
        with ThreadPoolExecutor(max_workers=min(threads, n_blocks)) as ex:
            list(ex.map(run_block, range(n_blocks)))

    step_sums = None
    if plan.track_step_sums:
        step_sums = np.zeros((n_steps + 1, 5))
        for part in sums_parts:
            step_sums += part
    hist = moments = None
    if hist_spec is not None:
        hist = np.zeros((hist_spec.n1, hist_spec.n2), dtype=np.int64)
        moments = np.zeros(6)
        for hpart, mpart in zip(hist_parts, mom_parts):
            hist += hpart
            moments += mpart

    n_events = int(ev_count[0])
    return RawResult(
        state=state,
        acc=acc,
        step_sums=step_sums,
        hist=hist,
        moments=moments,
        mtm_marks=marks[:, :n_marks] if marks is not None else None,
        series=series,
        events=events[:n_events] if events is not None else None,
        events_truncated=bool(events is not None and n_events >= plan.events_cap),
        kernel=name,
        threads=threads,
    )
