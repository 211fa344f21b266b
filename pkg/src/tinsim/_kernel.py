"""Compiled inner loop of the time-domain simulator."""

import numba
import numpy as np


@numba.njit(cache=True)
def run_chunk(state, A, eq_gain, chol, therm, gk, fcoef, qba_coef, qba_noise,
              nu0, l0, lock, lock_alpha, adiabatic, field, field_decay_dt, kappa_half,
              probe, sensor_gain, imp_noise, fb_b, fb_a, fb_state, fb_gain, y_prev, tone_amp, tone_w,
              tone_mask, t0, dt, x_limit,
              out_x, out_nu, out_int, out_y, offset):
    """Advance all modes over ``therm.shape[0]`` steps.

    state: (n, 2) position and velocity, updated in place.
    Returns the number of steps completed (< chunk length on instability).
    """
    n_steps = therm.shape[0]
    n_modes = state.shape[0]
    n_fb = fb_b.shape[0]
    force = np.zeros(n_modes)
    for k in range(n_steps):
        dnu = 0.0
        for j in range(n_modes):
            dnu += gk[j] * state[j, 0]
        nu_eff = nu0 + dnu - lock[0]
        lock[0] += lock_alpha * (dnu - lock[0])

        if adiabatic:
            inten = 1.0 / (1.0 + nu_eff * nu_eff)
        else:
            delta = kappa_half * nu_eff
            denom_re = kappa_half
            denom_im = -delta
            mag = denom_re * denom_re + denom_im * denom_im
            ss_re = kappa_half * denom_re / mag
            ss_im = -kappa_half * denom_im / mag
            dec = np.exp(-field_decay_dt)
            c = np.cos(delta * dt) * dec
            s = np.sin(delta * dt) * dec
            dr = field[0] - ss_re
            di = field[1] - ss_im
            field[0] = ss_re + c * dr - s * di
            field[1] = ss_im + s * dr + c * di
            inten = field[0] * field[0] + field[1] * field[1]

        y = state[probe, 0] + imp_noise[k]
        idx = offset + k
        if out_x.shape[0] > 0:
            for j in range(n_modes):
                out_x[idx, j] = state[j, 0]
        if out_nu.shape[0] > 0:
            out_nu[idx] = nu_eff
        if out_int.shape[0] > 0:
            out_int[idx] = inten
        if out_y.shape[0] > 0:
            out_y[idx] = y

        # feedback: band-passed finite-difference velocity of the homodyne sensor
        sensor = imp_noise[k]
        for j in range(n_modes):
            sensor += sensor_gain[j] * state[j, 0]
        u = (sensor - y_prev[0]) / dt
        y_prev[0] = sensor
        for f in range(n_fb):
            w = u - fb_a[f, 1] * fb_state[f, 0] - fb_a[f, 2] * fb_state[f, 1]
            out = fb_b[f, 0] * w + fb_b[f, 1] * fb_state[f, 0] + fb_b[f, 2] * fb_state[f, 1]
            fb_state[f, 1] = fb_state[f, 0]
            fb_state[f, 0] = w
            fb_state[f, 2] = out

        t = t0 + k * dt
        tone = tone_amp * np.cos(tone_w * t)
        rp = inten - l0
        for j in range(n_modes):
            fj = fcoef[j] * rp + qba_coef[j] * qba_noise[k] + tone * tone_mask[j]
            for f in range(n_fb):
                fj -= fb_gain[f, j] * fb_state[f, 2]
            force[j] = fj

        for j in range(n_modes):
            xe = force[j] * eq_gain[j]
            x0 = state[j, 0] - xe
            v0 = state[j, 1]
            x1 = A[j, 0, 0] * x0 + A[j, 0, 1] * v0
            v1 = A[j, 1, 0] * x0 + A[j, 1, 1] * v0
            n1 = therm[k, j, 0]
            n2 = therm[k, j, 1]
            state[j, 0] = x1 + xe + chol[j, 0] * n1
            state[j, 1] = v1 + chol[j, 1] * n1 + chol[j, 2] * n2
            if abs(state[j, 0]) > x_limit[j]:
                return k + 1
    return n_steps
