# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel.

Same contract and identical floating-point expression order as the
pure-numpy reference in ``_kernel_ref.run_chunk`` (built with FP
contraction disabled), so per-path results agree bit-for-bit.  Runs a
block of paths sequentially with the GIL released; the orchestrator in
``kernels`` dispatches blocks across threads.
"""

from libc.math cimport fabs

import numpy as np

cimport numpy as cnp

cnp.import_array()

# scalar pack indices -- layout defined by kernels.pack_scalars()
cdef enum:
    S_DT = 0
    S_AS = 1
    S_AE0 = 2
    S_AE1 = 3
    S_AD0 = 4
    S_AD1 = 5
    S_AD2 = 6
    S_KEDT = 7
    S_KDDT = 8
    S_DBAR = 9
    S_PSIS = 10
    S_I2ES = 11
    S_ETAS = 12
    S_PSIF = 13
    S_I2EF = 14
    S_ETAF = 15
    S_RHO = 16
    S_ISS = 17
    S_ISE = 18
    S_IRC = 19
    S_FLOOR = 20
    MAX_SIZES = 32


cdef inline double _sgn(double x) nogil:
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


cdef inline double _cubic(const double[:, ::1] c, double x0, double h,
                          double x, long* clamped) nogil:
    cdef long nint = c.shape[0]
    cdef double hi = x0 + h * nint
    cdef double xc = x
    cdef long idx
    cdef double d
    if xc < x0:
        xc = x0
        clamped[0] += 1
    elif xc > hi:
        xc = hi
        clamped[0] += 1
    idx = <long>((xc - x0) / h)
    if idx > nint - 1:
        idx = nint - 1
    d = xc - (x0 + idx * h)
    return ((c[idx, 0] * d + c[idx, 1]) * d + c[idx, 2]) * d + c[idx, 3]


def run_chunk(
    const double[:, ::1] coeffs, long coeff_stride,
    const double[::1] gains, long gain_stride,
    const double[:, :, ::1] off_c, double off_p0, double off_h,
    const double[:, ::1] fill_c, double fill_d0, double fill_h,
    const double[::1] sizes, const double[::1] lam_dt,
    const double[::1] scal,
    long filtered, long exogenous, long futures_on,
    const double[::1] exo_S, const double[::1] exo_E,
    const double[:, :, ::1] normals, const double[:, :, ::1] uniforms,
    long step0, long n_steps, long final_chunk,
    double[:, ::1] state, double[:, ::1] acc,
    long has_sums, double[:, ::1] step_sums,
    long hist_on, cnp.int64_t[:, ::1] hist, long hist_stride, long sample_start,
    double h_lo1, double h_invw1, double h_lo2, double h_invw2,
    double[::1] moments,
    long window_len, double[:, ::1] mtm_marks,
    long series_stride, double[:, ::1] series,
    long events_cap, double[:, ::1] events, cnp.int64_t[::1] ev_count,
):
    cdef long n_paths = normals.shape[0]
    cdef long chunk = normals.shape[1]
    cdef long n_sizes = sizes.shape[0]
    if n_sizes > MAX_SIZES:
        raise ValueError("ladder too long for the compiled kernel")
    cdef double dt = scal[S_DT]
    cdef double psi_s = scal[S_PSIS], i2e_s = scal[S_I2ES], eta_s = scal[S_ETAS]
    cdef double psi_f = scal[S_PSIF], i2e_f = scal[S_I2EF], eta_f = scal[S_ETAF]
    cdef double floor_bp = scal[S_FLOOR]
    cdef long nev = ev_count[0]
    cdef long nb1 = hist.shape[0], nb2 = hist.shape[1]

    cdef long ip, i, j, g, gb, row, b1, b2
    cdef double S, E, D, Dh, qS, qF, X, Dp
    cdef double a11, ax1, ax2, mS, mF, wS, wF, vS, vF
    cdef double z, pb, pa, fv, prob, S1, E1, D1, dS, dE
    cdef double n0, n1, n2, gain, dwD, mtm
    cdef long dummy
    cdef double db_arr[MAX_SIZES]
    cdef double da_arr[MAX_SIZES]
    cdef double prb_arr[MAX_SIZES]
    cdef double pra_arr[MAX_SIZES]
    cdef long clamp_counter

    with nogil:
        for ip in range(n_paths):
            S = state[ip, 0]
            E = state[ip, 1]
            D = state[ip, 2]
            Dh = state[ip, 3]
            qS = state[ip, 4]
            qF = state[ip, 5]
            X = state[ip, 6]

            if step0 == 0:
                if has_sums:
                    step_sums[0, 0] += qS
                    step_sums[0, 1] += qF
                    step_sums[0, 2] += qS * qS
                    step_sums[0, 3] += qF * qF
                    step_sums[0, 4] += qS * qF
                if hist_on and 0 >= sample_start:
                    b1 = <long>((qS - h_lo1) * h_invw1)
                    if b1 < 0:
                        b1 = 0
                    elif b1 > nb1 - 1:
                        b1 = nb1 - 1
                    b2 = <long>((qF - h_lo2) * h_invw2)
                    if b2 < 0:
                        b2 = 0
                    elif b2 > nb2 - 1:
                        b2 = nb2 - 1
                    hist[b1, b2] += 1
                    moments[0] += 1
                    moments[1] += qS
                    moments[2] += qF
                    moments[3] += qS * qS
                    moments[4] += qF * qF
                    moments[5] += qS * qF

            for i in range(chunk):
                g = step0 + i
                row = g * coeff_stride
                a11 = coeffs[row, 0]
                if filtered:
                    Dp = Dh
                else:
                    Dp = D
                ax1 = coeffs[row, 1] * qS + coeffs[row, 2] * qF \
                    + coeffs[row, 3] * E + coeffs[row, 4] * Dp
                ax2 = coeffs[row, 6] * qS + coeffs[row, 7] * qF \
                    + coeffs[row, 8] * E + coeffs[row, 9] * Dp
                mS = -2.0 * ax1 - coeffs[row, 5]
                mF = -2.0 * ax2 - coeffs[row, 10]

                wS = fabs(mS) - psi_s
                if wS > 0.0:
                    vS = _sgn(mS) * wS * i2e_s
                else:
                    vS = 0.0
                if futures_on:
                    wF = fabs(mF) - psi_f
                    if wF > 0.0:
                        vF = _sgn(mF) * wF * i2e_f
                    else:
                        vF = 0.0
                else:
                    vF = 0.0

                clamp_counter = 0
                for j in range(n_sizes):
                    z = sizes[j]
                    pb = z * a11 - mS
                    pa = z * a11 + mS
                    db_arr[j] = _cubic(off_c[j], off_p0, off_h, pb, &clamp_counter)
                    da_arr[j] = _cubic(off_c[j], off_p0, off_h, pa, &clamp_counter)
                    if db_arr[j] < floor_bp:
                        db_arr[j] = floor_bp
                        clamp_counter += 1
                    if da_arr[j] < floor_bp:
                        da_arr[j] = floor_bp
                        clamp_counter += 1
                    dummy = 0
                    fv = _cubic(fill_c, fill_d0, fill_h, db_arr[j], &dummy)
                    prob = lam_dt[j] * fv
                    if prob < 0.0:
                        prob = 0.0
                    elif prob > 1.0:
                        prob = 1.0
                    prb_arr[j] = prob
                    fv = _cubic(fill_c, fill_d0, fill_h, da_arr[j], &dummy)
                    prob = lam_dt[j] * fv
                    if prob < 0.0:
                        prob = 0.0
                    elif prob > 1.0:
                        prob = 1.0
                    pra_arr[j] = prob
                acc[ip, 5] += clamp_counter

                if series_stride > 0 and ip == 0 and g % series_stride == 0:
                    mtm = X + qS * S + qF * (S + E)
                    series[g // series_stride, 0] = g
                    series[g // series_stride, 1] = S
                    series[g // series_stride, 2] = E
                    series[g // series_stride, 3] = D
                    series[g // series_stride, 4] = Dh
                    series[g // series_stride, 5] = qS
                    series[g // series_stride, 6] = qF
                    series[g // series_stride, 7] = X
                    series[g // series_stride, 8] = mtm
                    series[g // series_stride, 9] = vS
                    series[g // series_stride, 10] = vF
                    series[g // series_stride, 11] = db_arr[0]
                    series[g // series_stride, 12] = da_arr[0]

                if exogenous:
                    S1 = exo_S[g + 1]
                    E1 = exo_E[g + 1]
                    D1 = D
                else:
                    n0 = normals[ip, i, 0]
                    n1 = normals[ip, i, 1]
                    n2 = normals[ip, i, 2]
                    S1 = S + scal[S_AS] * n0
                    E1 = E - scal[S_KEDT] * (E - D) + scal[S_AE0] * n0 + scal[S_AE1] * n1
                    D1 = D - scal[S_KDDT] * (D - scal[S_DBAR]) \
                        + scal[S_AD0] * n0 + scal[S_AD1] * n1 + scal[S_AD2] * n2
                dS = S1 - S
                dE = E1 - E

                for j in range(n_sizes):
                    z = sizes[j]
                    if uniforms[ip, i, 2 * j] < prb_arr[j]:
                        qS = qS + z
                        X = X - z * (S1 - db_arr[j])
                        acc[ip, 0] += z
                        acc[ip, 4] += 1
                        if events_cap > 0 and ip == 0 and nev < events_cap:
                            events[nev, 0] = g
                            events[nev, 1] = 0.0
                            events[nev, 2] = j
                            events[nev, 3] = db_arr[j]
                            events[nev, 4] = S1
                            nev += 1
                    if uniforms[ip, i, 2 * j + 1] < pra_arr[j]:
                        qS = qS - z
                        X = X + z * (S1 + da_arr[j])
                        acc[ip, 1] += z
                        acc[ip, 4] += 1
                        if events_cap > 0 and ip == 0 and nev < events_cap:
                            events[nev, 0] = g
                            events[nev, 1] = 1.0
                            events[nev, 2] = j
                            events[nev, 3] = da_arr[j]
                            events[nev, 4] = S1
                            nev += 1

                qS = qS + vS * dt
                qF = qF + vF * dt
                X = X - (vS * S1 + psi_s * fabs(vS) + eta_s * vS * vS
                         + vF * (S1 + E1) + psi_f * fabs(vF)
                         + eta_f * vF * vF) * dt
                acc[ip, 2] += fabs(vS) * dt
                acc[ip, 3] += fabs(vF) * dt

                if filtered:
                    gain = gains[g * gain_stride]
                    dwD = ((dE + scal[S_KEDT] * (E - Dh)) * scal[S_ISE]
                           - scal[S_RHO] * dS * scal[S_ISS]) * scal[S_IRC]
                    Dh = Dh - scal[S_KDDT] * (Dh - scal[S_DBAR]) + gain * dwD

                S = S1
                E = E1
                D = D1
                gb = g + 1
                if has_sums:
                    step_sums[gb, 0] += qS
                    step_sums[gb, 1] += qF
                    step_sums[gb, 2] += qS * qS
                    step_sums[gb, 3] += qF * qF
                    step_sums[gb, 4] += qS * qF
                if hist_on and gb >= sample_start and gb % hist_stride == 0:
                    b1 = <long>((qS - h_lo1) * h_invw1)
                    if b1 < 0:
                        b1 = 0
                    elif b1 > nb1 - 1:
                        b1 = nb1 - 1
                    b2 = <long>((qF - h_lo2) * h_invw2)
                    if b2 < 0:
                        b2 = 0
                    elif b2 > nb2 - 1:
                        b2 = nb2 - 1
                    hist[b1, b2] += 1
                    moments[0] += 1
                    moments[1] += qS
                    moments[2] += qF
                    moments[3] += qS * qS
                    moments[4] += qF * qF
                    moments[5] += qS * qF
                if window_len > 0 and gb % window_len == 0:
                    mtm_marks[ip, gb // window_len - 1] = X + qS * S + qF * (S + E)

            if final_chunk and series_stride > 0 and ip == 0 \
                    and n_steps % series_stride == 0:
                g = n_steps
                row = g * coeff_stride
                if filtered:
                    Dp = Dh
                else:
                    Dp = D
                ax1 = coeffs[row, 1] * qS + coeffs[row, 2] * qF \
                    + coeffs[row, 3] * E + coeffs[row, 4] * Dp
                ax2 = coeffs[row, 6] * qS + coeffs[row, 7] * qF \
                    + coeffs[row, 8] * E + coeffs[row, 9] * Dp
                mS = -2.0 * ax1 - coeffs[row, 5]
                mF = -2.0 * ax2 - coeffs[row, 10]
                wS = fabs(mS) - psi_s
                if wS > 0.0:
                    vS = _sgn(mS) * wS * i2e_s
                else:
                    vS = 0.0
                wF = fabs(mF) - psi_f
                if futures_on and wF > 0.0:
                    vF = _sgn(mF) * wF * i2e_f
                else:
                    vF = 0.0
                dummy = 0
                pb = sizes[0] * coeffs[row, 0] - mS
                pa = sizes[0] * coeffs[row, 0] + mS
                db_arr[0] = _cubic(off_c[0], off_p0, off_h, pb, &dummy)
                da_arr[0] = _cubic(off_c[0], off_p0, off_h, pa, &dummy)
                if db_arr[0] < floor_bp:
                    db_arr[0] = floor_bp
                if da_arr[0] < floor_bp:
                    da_arr[0] = floor_bp
                mtm = X + qS * S + qF * (S + E)
                series[g // series_stride, 0] = g
                series[g // series_stride, 1] = S
                series[g // series_stride, 2] = E
                series[g // series_stride, 3] = D
                series[g // series_stride, 4] = Dh
                series[g // series_stride, 5] = qS
                series[g // series_stride, 6] = qF
                series[g // series_stride, 7] = X
                series[g // series_stride, 8] = mtm
                series[g // series_stride, 9] = vS
                series[g // series_stride, 10] = vF
                series[g // series_stride, 11] = db_arr[0]
                series[g // series_stride, 12] = da_arr[0]

            state[ip, 0] = S
            state[ip, 1] = E
            state[ip, 2] = D
            state[ip, 3] = Dh
            state[ip, 4] = qS
            state[ip, 5] = qF
            state[ip, 6] = X

    ev_count[0] = nev
