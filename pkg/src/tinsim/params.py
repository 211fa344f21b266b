"""Physical parameter types and closed-form scalar quantities.

Every frequency stored on these types is angular (rad/s). Constructors taking
ordinary frequencies are named ``*_hz`` and convert once, here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .constants import C_LIGHT, HBAR, K_B, TWO_PI


class DampingModel(str, Enum):
    VISCOUS = "viscous"
    STRUCTURAL = "structural"


@dataclass(frozen=True)
class MechanicalMode:
    """One flexural mode of the resonator.

    Attributes
    ----------
    mass : float
        Effective mass in kg.
    omega_m : float
        Resonance frequency in rad/s.
    gamma_m : float
        Energy damping rate in rad/s.
    coupling_G : float
        Dispersive coupling d(omega_c)/dx in rad/s per m.
    temperature : float
        Bath temperature in K.
    damping_model : DampingModel
        Force-noise model used when building thermal spectra.
    """

    mass: float
    omega_m: float
    gamma_m: float
    coupling_G: float = 0.0
    temperature: float = 298.0
    damping_model: DampingModel = DampingModel.VISCOUS

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be > 0, got {self.mass}")
        if not self.omega_m > 0:
            raise ValueError(f"omega_m must be > 0, got {self.omega_m}")
        if not self.gamma_m > 0:
            raise ValueError(f"gamma_m must be > 0, got {self.gamma_m}")
        if not self.gamma_m < self.omega_m:
            raise ValueError("mode must be underdamped (gamma_m < omega_m)")
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        object.__setattr__(self, "damping_model", DampingModel(self.damping_model))

    @classmethod
    def from_hz(cls, mass, f_m, q, coupling_G=0.0, temperature=298.0,
                damping_model=DampingModel.VISCOUS):
        omega = TWO_PI * f_m
        return cls(mass, omega, omega / q, coupling_G, temperature, damping_model)

    @classmethod
    def from_g0(cls, mass, f_m, q, g0, temperature=298.0,
                damping_model=DampingModel.VISCOUS):
        """Build a mode whose vacuum coupling rate is ``g0`` (rad/s)."""
        omega = TWO_PI * f_m
        xzp = math.sqrt(HBAR / (2 * mass * omega))
        return cls(mass, omega, omega / q, g0 / xzp, temperature, damping_model)

    @property
    def q_factor(self):
        return self.omega_m / self.gamma_m

    @property
    def x_zp(self):
        return math.sqrt(HBAR / (2 * self.mass * self.omega_m))

    @property
    def f_m(self):
        return self.omega_m / TWO_PI

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class CavityParams:
    """Optical cavity operating point.

    ``n_cav`` is the mean intracavity photon number at the operating
    detuning; the value on resonance for the same drive is
    ``n_cav * (1 + nu**2)``.
    """

    kappa: float
    detuning_nu: float = 0.0
    n_cav: float = 0.0
    omega_laser: float = TWO_PI * C_LIGHT / 786e-9
    eta: float = 0.4

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not self.n_cav >= 0:
            raise ValueError(f"n_cav must be >= 0, got {self.n_cav}")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not math.isfinite(self.detuning_nu):
            raise ValueError("detuning_nu must be finite")

    @classmethod
    def from_finesse(cls, finesse, length, **kw):
        """kappa = 2 pi FSR / F for a cavity of the given length (m)."""
        fsr = C_LIGHT / (2 * length)
        return cls(kappa=TWO_PI * fsr / finesse, **kw)

    @property
    def detuning(self):
        """Laser-cavity detuning Delta in rad/s."""
        return self.detuning_nu * self.kappa / 2

    @property
    def n_cav_resonant(self):
        return self.n_cav * (1 + self.detuning_nu ** 2)

    @property
    def wavelength(self):
        return TWO_PI * C_LIGHT / self.omega_laser

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class SystemParams:
    modes: tuple
    cavity: CavityParams
    probe_index: int = 0

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        if not modes:
            raise ValueError("at least one mechanical mode is required")
        if not 0 <= self.probe_index < len(modes):
            raise ValueError(f"probe_index {self.probe_index} out of range")
        temps = {m.temperature for m in modes}
        if len(temps) > 1:
            raise ValueError(f"all modes must share one bath temperature, got {sorted(temps)}")

    @property
    def probe(self):
        return self.modes[self.probe_index]

    @property
    def temperature(self):
        return self.modes[0].temperature

    def with_temperature(self, temperature):
        return replace(self, modes=tuple(m.replace(temperature=temperature) for m in self.modes))

    def replace(self, **changes):
        return replace(self, **changes)


def vacuum_coupling_rate(mode):
    """g0 = G x_zp in rad/s."""
    return mode.coupling_G * mode.x_zp


def vacuum_cooperativity(mode, cavity):
    """C0 = 4 g0^2 / (kappa Gamma_m)."""
    g0 = vacuum_coupling_rate(mode)
    return 4 * g0 ** 2 / (cavity.kappa * mode.gamma_m)


def vacuum_cooperativity_direct(mode, cavity):
    """C0 = 2 G^2 hbar / (m omega_m Gamma_m kappa); algebraically equal to
    :func:`vacuum_cooperativity`."""
    return (2 * mode.coupling_G ** 2 * HBAR
            / (mode.mass * mode.omega_m * mode.gamma_m * cavity.kappa))


def thermal_occupation(mode):
    """k_B T / (hbar omega_m), evaluated at the mechanical frequency."""
    return K_B * mode.temperature / (HBAR * mode.omega_m)


def rms_thermal_displacement(mode):
    """sqrt(k_B T / (m omega_m^2)) in m."""
    return math.sqrt(K_B * mode.temperature / (mode.mass * mode.omega_m ** 2))


def nonlinearity_parameter(mode, cavity):
    """G x_th / kappa; thermal transduction becomes nonlinear as this nears 1."""
    return mode.coupling_G * rms_thermal_displacement(mode) / cavity.kappa


def photon_number_from_power(p_in, cavity):
    """Mean intracavity photon number for input power ``p_in`` (W).

    4 eta P / (hbar omega_L kappa) on resonance, times 1/(1 + nu^2).
    """
    if p_in < 0:
        raise ValueError(f"input power must be >= 0, got {p_in}")
    n_res = 4 * cavity.eta * p_in / (HBAR * cavity.omega_laser * cavity.kappa)
    return n_res / (1 + cavity.detuning_nu ** 2)


def zero_point_detuning_psd(mode, cavity):
    """S_nu^ZP = (4 g0^2 / Gamma_m) / kappa^2, equal to C0 / kappa."""
    g0 = vacuum_coupling_rate(mode)
    return (4 * g0 ** 2 / mode.gamma_m) / cavity.kappa ** 2


def zero_point_displacement_psd(mode):
    """S_x^ZP = 4 x_zp^2 / Gamma_m on resonance."""
    return 4 * mode.x_zp ** 2 / mode.gamma_m


# Reference operating point of the trampoline-in-the-middle experiment.
DEVICE_G0 = TWO_PI * 1.5e3
DEVICE_KAPPA = TWO_PI * 0.65e9
DEVICE_F_M = 41e3
DEVICE_Q = 7.8e6
DEVICE_MASS = 12e-12
DEVICE_T = 298.0
DEVICE_WAVELENGTH = 786e-9
DEVICE_ETA = 0.40


def device_mode(**overrides):
    kw = dict(mass=DEVICE_MASS, f_m=DEVICE_F_M, q=DEVICE_Q, g0=DEVICE_G0, temperature=DEVICE_T)
    kw.update(overrides)
    return MechanicalMode.from_g0(**kw)


def device_cavity(**overrides):
    kw = dict(kappa=DEVICE_KAPPA, detuning_nu=0.0, n_cav=0.0,
              omega_laser=TWO_PI * C_LIGHT / DEVICE_WAVELENGTH, eta=DEVICE_ETA)
    kw.update(overrides)
    return CavityParams(**kw)
