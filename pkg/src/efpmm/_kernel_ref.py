"""Pure-numpy simulation kernel (fallback when the compiled core is absent).

Vectorizes across paths within each time step.  Every floating-point
expression here is written in the exact operation order used by the
compiled kernel in ``_speedup.pyx`` (and that extension is built with
FP contraction off), so per-path outputs of the two kernels are
bit-identical.  Cross-path reductions (step sums, moment accumulators)
may differ between kernels at rounding level because the summation order
differs; they are exactly reproducible within each kernel.

Step semantics (shared contract, see ``kernels.build_plan`` for the
argument layout):

1. controls from the boundary state: affine marginal values off the
   per-step policy rows, per-size offsets via the cubic offset tables,
   hedge rates via the closed-form execution Hamiltonian derivative;
2. optional series row (path 0);
3. price update (Euler, correlated Gaussians / exogenous path);
4. client fills: per size and side, Bernoulli with probability
   lambda*f(delta)*dt, booked at the post-update spot;
5. hedges at the post-update prices, quadratic+linear cost;
6. filter update from the realized increments (filtered mode);
7. boundary accumulators (ensemble sums, histogram, window marks).
"""

from __future__ import annotations

import numpy as np

# scalar pack indices -- single source of layout is kernels.pack_scalars()
(S_DT, S_AS, S_AE0, S_AE1, S_AD0, S_AD1, S_AD2, S_KEDT, S_KDDT, S_DBAR,
 S_PSIS, S_I2ES, S_ETAS, S_PSIF, S_I2EF, S_ETAF, S_RHO, S_ISS, S_ISE,
 S_IRC, S_FLOOR) = range(21)


def _cubic(coeffs, x0, h, x):
    """Clamped uniform-grid cubic spline; returns (value, was_clamped)."""
    n_int = coeffs.shape[0]
    hi = x0 + h * n_int
    xc = np.minimum(np.maximum(x, x0), hi)
    clamped = xc != x
    idx = np.minimum(((xc - x0) / h).astype(np.int64), n_int - 1)
    d = xc - (x0 + idx * h)
    c = coeffs[idx]
    return ((c[:, 0] * d + c[:, 1]) * d + c[:, 2]) * d + c[:, 3], clamped


def run_chunk(
    coeffs, coeff_stride,
    gains, gain_stride,
    off_c, off_p0, off_h,
    fill_c, fill_d0, fill_h,
    sizes, lam_dt,
    scal,
    filtered, exogenous, futures_on,
    exo_S, exo_E,
    normals, uniforms,
    step0, n_steps, final_chunk,
    state, acc,
    has_sums, step_sums,
    hist_on, hist, hist_stride, sample_start,
    h_lo1, h_invw1, h_lo2, h_invw2,
    moments,
    window_len, mtm_marks,
    series_stride, series,
    events_cap, events, ev_count,
):
    n_paths, chunk, _ = normals.shape
    n_sizes = len(sizes)
    dt = scal[S_DT]

    S = state[:, 0].copy()
    E = state[:, 1].copy()
    D = state[:, 2].copy()
    Dh = state[:, 3].copy()
    qS = state[:, 4].copy()
    qF = state[:, 5].copy()
    X = state[:, 6].copy()
    nclamp = acc[:, 5].copy()

    if step0 == 0:
        if has_sums:
            step_sums[0, 0] += qS.sum()
            step_sums[0, 1] += qF.sum()
            step_sums[0, 2] += (qS * qS).sum()
            step_sums[0, 3] += (qF * qF).sum()
            step_sums[0, 4] += (qS * qF).sum()
        if hist_on and 0 >= sample_start:
            _hist_accumulate(hist, moments, qS, qF, h_lo1, h_invw1, h_lo2, h_invw2)

    nev = int(ev_count[0])
    for i in range(chunk):
        g = step0 + i
        row = coeffs[g * coeff_stride]
        a11 = row[0]
        Dp = Dh if filtered else D
        ax1 = row[1] * qS + row[2] * qF + row[3] * E + row[4] * Dp
        ax2 = row[6] * qS + row[7] * qF + row[8] * E + row[9] * Dp
        mS = -2.0 * ax1 - row[5]
        mF = -2.0 * ax2 - row[10]

        wS = np.abs(mS) - scal[S_PSIS]
        vS = np.where(wS > 0.0, np.sign(mS) * wS * scal[S_I2ES], 0.0)
        if futures_on:
            wF = np.abs(mF) - scal[S_PSIF]
            vF = np.where(wF > 0.0, np.sign(mF) * wF * scal[S_I2EF], 0.0)
        else:
            vF = np.zeros_like(mF)

        deltas_b = np.empty((n_sizes, n_paths))
        deltas_a = np.empty((n_sizes, n_paths))
        probs_b = np.empty((n_sizes, n_paths))
        probs_a = np.empty((n_sizes, n_paths))
        for j in range(n_sizes):
            pb = sizes[j] * a11 - mS
            pa = sizes[j] * a11 + mS
            db, cb = _cubic(off_c[j], off_p0, off_h, pb)
            da, ca = _cubic(off_c[j], off_p0, off_h, pa)
            fb = db < scal[S_FLOOR]
            fa = da < scal[S_FLOOR]
            db = np.where(fb, scal[S_FLOOR], db)
            da = np.where(fa, scal[S_FLOOR], da)
            nclamp += cb.astype(np.float64)
            nclamp += fb.astype(np.float64)
            nclamp += ca.astype(np.float64)
            nclamp += fa.astype(np.float64)
            prob_b, _ = _cubic(fill_c, fill_d0, fill_h, db)
            prob_a, _ = _cubic(fill_c, fill_d0, fill_h, da)
            deltas_b[j] = db
            deltas_a[j] = da
            probs_b[j] = np.minimum(np.maximum(lam_dt[j] * prob_b, 0.0), 1.0)
            probs_a[j] = np.minimum(np.maximum(lam_dt[j] * prob_a, 0.0), 1.0)

        if series_stride > 0 and g % series_stride == 0:
            mtm = X[0] + qS[0] * S[0] + qF[0] * (S[0] + E[0])
            series[g // series_stride] = (
                g, S[0], E[0], D[0], Dh[0], qS[0], qF[0], X[0], mtm,
                vS[0], vF[0], deltas_b[0, 0], deltas_a[0, 0])

        if exogenous:
            S1 = np.full(n_paths, exo_S[g + 1])
            E1 = np.full(n_paths, exo_E[g + 1])
            D1 = D
        else:
            n0 = normals[:, i, 0]
            n1 = normals[:, i, 1]
            n2 = normals[:, i, 2]
            S1 = S + scal[S_AS] * n0
            E1 = E - scal[S_KEDT] * (E - D) + scal[S_AE0] * n0 + scal[S_AE1] * n1
            D1 = D - scal[S_KDDT] * (D - scal[S_DBAR]) \
                + scal[S_AD0] * n0 + scal[S_AD1] * n1 + scal[S_AD2] * n2
        dS = S1 - S
        dE = E1 - E

        for j in range(n_sizes):
            z = sizes[j]
            hit_b = uniforms[:, i, 2 * j] < probs_b[j]
            hit_a = uniforms[:, i, 2 * j + 1] < probs_a[j]
            if hit_b.any():
                qS = np.where(hit_b, qS + z, qS)
                X = np.where(hit_b, X - z * (S1 - deltas_b[j]), X)
                acc[hit_b, 0] += z
                acc[hit_b, 4] += 1
            if hit_a.any():
                qS = np.where(hit_a, qS - z, qS)
                X = np.where(hit_a, X + z * (S1 + deltas_a[j]), X)
                acc[hit_a, 1] += z
                acc[hit_a, 4] += 1
            if events_cap > 0:
                if hit_b[0] and nev < events_cap:
                    events[nev] = (g, 0.0, j, deltas_b[j, 0], S1[0])
                    nev += 1
                if hit_a[0] and nev < events_cap:
                    events[nev] = (g, 1.0, j, deltas_a[j, 0], S1[0])
                    nev += 1

        qS = qS + vS * dt
        qF = qF + vF * dt
        X = X - (vS * S1 + scal[S_PSIS] * np.abs(vS) + scal[S_ETAS] * vS * vS
                 + vF * (S1 + E1) + scal[S_PSIF] * np.abs(vF)
                 + scal[S_ETAF] * vF * vF) * dt
        acc[:, 2] += np.abs(vS) * dt
        acc[:, 3] += np.abs(vF) * dt

        if filtered:
            gain = gains[g * gain_stride]
            dwD = ((dE + scal[S_KEDT] * (E - Dh)) * scal[S_ISE]
                   - scal[S_RHO] * dS * scal[S_ISS]) * scal[S_IRC]
            Dh = Dh - scal[S_KDDT] * (Dh - scal[S_DBAR]) + gain * dwD

        S, E, D = S1, E1, D1
        gb = g + 1
        if has_sums:
            step_sums[gb, 0] += qS.sum()
            step_sums[gb, 1] += qF.sum()
            step_sums[gb, 2] += (qS * qS).sum()
            step_sums[gb, 3] += (qF * qF).sum()
            step_sums[gb, 4] += (qS * qF).sum()
        if hist_on and gb >= sample_start and gb % hist_stride == 0:
            _hist_accumulate(hist, moments, qS, qF, h_lo1, h_invw1, h_lo2, h_invw2)
        if window_len > 0 and gb % window_len == 0:
            mtm_marks[:, gb // window_len - 1] = X + qS * S + qF * (S + E)

    if final_chunk and series_stride > 0 and n_steps % series_stride == 0:
        g = n_steps
        row = coeffs[g * coeff_stride]
        Dp0 = Dh[0] if filtered else D[0]
        ax1 = row[1] * qS[0] + row[2] * qF[0] + row[3] * E[0] + row[4] * Dp0
        ax2 = row[6] * qS[0] + row[7] * qF[0] + row[8] * E[0] + row[9] * Dp0
        mS0 = -2.0 * ax1 - row[5]
        mF0 = -2.0 * ax2 - row[10]
        wS0 = abs(mS0) - scal[S_PSIS]
        vS0 = np.sign(mS0) * wS0 * scal[S_I2ES] if wS0 > 0.0 else 0.0
        wF0 = abs(mF0) - scal[S_PSIF]
        vF0 = (np.sign(mF0) * wF0 * scal[S_I2EF]
               if (futures_on and wF0 > 0.0) else 0.0)
        pb = np.array([sizes[0] * row[0] - mS0])
        pa = np.array([sizes[0] * row[0] + mS0])
        db, _ = _cubic(off_c[0], off_p0, off_h, pb)
        da, _ = _cubic(off_c[0], off_p0, off_h, pa)
        mtm = X[0] + qS[0] * S[0] + qF[0] * (S[0] + E[0])
        series[g // series_stride] = (
            g, S[0], E[0], D[0], Dh[0], qS[0], qF[0], X[0], mtm, vS0, vF0,
            max(db[0], scal[S_FLOOR]), max(da[0], scal[S_FLOOR]))

    ev_count[0] = nev
    acc[:, 5] = nclamp
    state[:, 0] = S
    state[:, 1] = E
    state[:, 2] = D
    state[:, 3] = Dh
    state[:, 4] = qS
    state[:, 5] = qF
    state[:, 6] = X


def _hist_accumulate(hist, moments, qS, qF, lo1, invw1, lo2, invw2):
    nb1, nb2 = hist.shape
    i1 = np.clip(((qS - lo1) * invw1).astype(np.int64), 0, nb1 - 1)
    i2 = np.clip(((qF - lo2) * invw2).astype(np.int64), 0, nb2 - 1)
    np.add.at(hist, (i1, i2), 1)
    moments[0] += len(qS)
    moments[1] += qS.sum()
    moments[2] += qF.sum()
    moments[3] += (qS * qS).sum()
    moments[4] += (qF * qF).sum()
    moments[5] += (qS * qF).sum()
