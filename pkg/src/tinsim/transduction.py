"""Cavity transduction of detuning fluctuations into intracavity intensity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .params import rms_thermal_displacement
from .spectra import Psd, SpectrumError, Units

MAGIC_NU = 1 / math.sqrt(3)


def lorentzian(nu):
    """Steady-state intracavity intensity 1/(1 + nu^2), normalized to 1 on resonance."""
    return 1.0 / (1.0 + np.square(nu))


@dataclass(frozen=True)
class DetuningExpansion:
    """n_c(nu + dnu) / n_c(nu) ~= c0 + c1 dnu + c2 dnu^2."""

    nu: float
    c0: float
    c1: float
    c2: float

    def __call__(self, dnu):
        return self.c0 + self.c1 * dnu + self.c2 * dnu ** 2

    @property
    def tin_prefactor(self):
        return self.c2 ** 2


def expansion_at(nu):
    if not math.isfinite(nu):
        raise ValueError("detuning must be finite")
    d = 1 + nu * nu
    return DetuningExpansion(nu, 1.0, -2 * nu / d, (3 * nu * nu - 1) / d ** 2)


def tin_prefactor(nu):
    """(3 nu^2 - 1)^2 / (1 + nu^2)^4; exactly zero at |nu| = 1/sqrt(3)."""
    nu = np.asarray(nu, dtype=float)
    c2 = (3 * nu * nu - 1) / (1 + nu * nu) ** 2
    out = c2 * c2
    # the magic point is not representable exactly; force the analytic zero
    out = np.where(np.isclose(np.abs(nu), MAGIC_NU, rtol=1e-12, atol=0), 0.0, out)
    return float(out) if out.ndim == 0 else out


def shot_rin(cavity, grid):
    """Shot-noise RIN of the intracavity photon number, one-sided, 1/Hz.

    (8 / (n_c kappa)) / (1 + 4 ((w + Delta) / kappa)^2), with the printed
    (w + Delta) argument kept as is; symmetrized forms also exist.
    """
    if not cavity.n_cav > 0:
        raise SpectrumError("shot noise is undefined for zero photons")
    w = grid.omega
    k = cavity.kappa
    values = (8 / (cavity.n_cav * k)) / (1 + 4 * ((w + cavity.detuning) / k) ** 2)
    return Psd(grid, values, Units.PER_HZ)


def tin_rin(s_nu2, nu):
    """TIN relative intensity noise from the spectrum of the squared detuning."""
    if s_nu2.units is not Units.PER_HZ:
        raise SpectrumError("expected a squared-detuning spectrum in 1/Hz")
    return s_nu2.scaled(tin_prefactor(nu))


def linear_rin(s_nu, nu):
    """Linearly transduced detuning noise c1^2 S_nu (residual thermal RIN)."""
    return s_nu.scaled(expansion_at(nu).c1 ** 2)


def swept_transmission(system, sweep_rate, thermal_amplitude, nu, depth=None, phase=0.0):
    """Transmission during a detuning sweep, modulated by the probe mode's motion.

    P(nu) = 1 / (1 + (nu + A cos(w_m nu / nu_dot + phase))^2) with
    A = 8 G x / kappa unless ``depth`` is given.
    """
    if sweep_rate == 0:
        raise ValueError("sweep_rate must be non-zero")
    mode = system.probe
    if depth is None:
        depth = 8 * mode.coupling_G * thermal_amplitude / system.cavity.kappa
    nu = np.asarray(nu, dtype=float)
    shift = depth * np.cos(mode.omega_m * nu / sweep_rate + phase)
    return lorentzian(nu + shift)


@dataclass(frozen=True)
class SweepFit:
    depth: float
    phase: float
    scale: float
    residual_rms: float

    @property
    def gx_over_kappa(self):
        """Modulation depth expressed as G x / kappa under the A = 8 G x / kappa model."""
        return self.depth / 8


def fit_swept_transmission(nu, power, omega_m, sweep_rate, depth_guess):
    """Least-squares fit of (depth, phase, scale) to a swept transmission trace."""
    nu = np.asarray(nu, dtype=float)
    power = np.asarray(power, dtype=float)
    arg = omega_m * nu / sweep_rate

    def model(p):
        a, ph, sc = p
        return sc * lorentzian(nu + a * np.cos(arg + ph))

    best = None
    for ph0 in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        res = optimize.least_squares(lambda p: model(p) - power,
                                     x0=[depth_guess, ph0, power.max()],
                                     x_scale=[max(depth_guess, 1e-3), 1.0, power.max()])
        if best is None or res.cost < best.cost:
            best = res
    a, ph, sc = best.x
    if a < 0:
        a, ph = -a, ph + np.pi
    rms = math.sqrt(2 * best.cost / nu.size)
    return SweepFit(float(a), float(np.mod(ph, 2 * np.pi)), float(sc), rms)


def thermal_sweep_depth(system):
    """Printed initial guess 8 G x_th / kappa for the probe mode."""
    mode = system.probe
    return 8 * mode.coupling_G * rms_thermal_displacement(mode) / system.cavity.kappa
