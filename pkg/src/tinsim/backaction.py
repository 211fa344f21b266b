"""Radiation-pressure force budgets, dynamical backaction and quantum cooperativity."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .constants import HBAR, K_B
from .params import (
    photon_number_from_power,
    thermal_occupation,
    vacuum_cooperativity,
    zero_point_detuning_psd,
)
from .spectra import NoiseBudget, Psd, Units, thermal_force_density
from .transduction import shot_rin, tin_prefactor


def thermal_force_psd(mode):
    """Flat viscous thermal force PSD 4 k_B T m Gamma_m (N^2/Hz)."""
    return 4 * K_B * mode.temperature * mode.mass * mode.gamma_m


def _force_scale(mode, cavity):
    return (HBAR * mode.coupling_G * cavity.n_cav) ** 2


def qba_force_psd(mode, cavity, grid):
    """Shot-noise radiation-pressure force (hbar G n_c)^2 S_RIN^shot."""
    if cavity.n_cav == 0:
        return Psd(grid, np.zeros(grid.n_points), Units.N2_PER_HZ)
    return shot_rin(cavity, grid).scaled(_force_scale(mode, cavity), Units.N2_PER_HZ)


def tinba_force_psd(mode, cavity, s_nu2):
    """TIN backaction force (hbar G n_c)^2 (3nu^2-1)^2/(1+nu^2)^4 S_nu^2."""
    factor = _force_scale(mode, cavity) * tin_prefactor(cavity.detuning_nu)
    return s_nu2.scaled(factor, Units.N2_PER_HZ)


def qba_thermal_ratio(mode, cavity):
    """Closed form C0 n_c / n_th / (1 + 4 Delta^2 / kappa^2) for w << kappa."""
    return (vacuum_cooperativity(mode, cavity) * cavity.n_cav / thermal_occupation(mode)
            / (1 + 4 * cavity.detuning ** 2 / cavity.kappa ** 2))


@dataclass(frozen=True)
class ForceBudget:
    s_f_thermal: Psd
    s_f_qba: Psd
    s_f_tin: Psd

    @property
    def grid(self):
        return self.s_f_thermal.grid


def force_budget(mode, cavity, grid, s_nu2=None):
    thermal = Psd(grid, thermal_force_density(mode, grid.omega), Units.N2_PER_HZ)
    qba = qba_force_psd(mode, cavity, grid)
    if s_nu2 is None:
        tin = Psd(grid, np.zeros(grid.n_points), Units.N2_PER_HZ)
    else:
        tin = tinba_force_psd(mode, cavity, s_nu2.resampled(grid))
    return ForceBudget(thermal, qba, tin)


def displacement_psd(mode, chi, budget):
    """|chi_eff|^2-filtered force components and their sum (m^2/Hz)."""
    if not chi.grid.same_as(budget.grid):
        raise ValueError("susceptibility and force budget use different grids")
    h2 = chi.magnitude_squared
    parts = {
        "thermal": Psd(chi.grid, h2 * budget.s_f_thermal.values, Units.M2_PER_HZ),
        "qba": Psd(chi.grid, h2 * budget.s_f_qba.values, Units.M2_PER_HZ),
        "tinba": Psd(chi.grid, h2 * budget.s_f_tin.values, Units.M2_PER_HZ),
    }
    return NoiseBudget(parts)


@dataclass(frozen=True)
class DynamicalBackaction:
    spring_shift: float  # rad/s
    opt_damping: float  # rad/s
    stable: bool


def _backaction_kernel(mode, cavity, omega):
    """Linear radiation-pressure response K(w), with dF = -K x.

    K(w) = 2 hbar G^2 n_c Delta / ((kappa/2 - i w)^2 + Delta^2), the sum of the
    Stokes and anti-Stokes sideband responses of the driven cavity.
    """
    d = cavity.detuning
    k2 = cavity.kappa / 2
    return (2 * HBAR * mode.coupling_G ** 2 * cavity.n_cav * d
            / ((k2 - 1j * omega) ** 2 + d ** 2))


def dynamical_backaction(mode, cavity):
    """Optical spring shift and optical damping at the mechanical frequency."""
    k = _backaction_kernel(mode, cavity, mode.omega_m)
    spring = k.real / (2 * mode.mass * mode.omega_m)
    damping = -k.imag / (mode.mass * mode.omega_m)
    stable = (mode.omega_m + spring > 0) and (mode.gamma_m + damping > 0)
    return DynamicalBackaction(float(spring), float(damping), bool(stable))


def spring_shift_bad_cavity(mode, cavity):
    """4 nu g0^2 n_c(nu=0) / (kappa (1 + nu^2)^2), valid for w_m << kappa."""
    nu = cavity.detuning_nu
    g0 = mode.coupling_G * mode.x_zp
    return 4 * nu * g0 ** 2 * cavity.n_cav_resonant / (cavity.kappa * (1 + nu * nu) ** 2)


@dataclass(frozen=True)
class CooperativityReport:
    c0: float
    n_th: float
    cq_ideal: float
    cq_with_tin: float
    cq_upper_bound: float
    n_c_optimal: float
    photon_number_ok: bool  # n_c >~ (1+nu^2) n_th / C0
    stability_ok: bool  # Q_m >~ 2 nu/(1+nu^2) n_th
    tin_ok: bool  # S_TIN <~ 2 S_nu^ZP / n_th / (1+nu^2)^2

    @property
    def conditions(self):
        return (self.photon_number_ok, self.stability_ok, self.tin_ok)


def cq_with_tin(n_c, c0, n_th, kappa, s_rin_tin, nu=0.0):
    """C_q = (1/(1+nu^2)) / (S_TIN n_c / (8/kappa) + n_th / (C0 n_c))."""
    n_c = np.asarray(n_c, dtype=float)
    with np.errstate(divide="ignore"):
        inv = s_rin_tin * kappa / 8 * n_c + n_th / (c0 * n_c)
        out = 1 / ((1 + nu * nu) * inv)
    return float(out) if out.ndim == 0 else out


def optimal_photon_number(c0, n_th, kappa, s_rin_tin):
    """Stationary point sqrt((8/kappa) n_th / (C0 S_TIN)) of :func:`cq_with_tin`."""
    if s_rin_tin <= 0:
        return math.inf
    return math.sqrt(8 / kappa * n_th / (c0 * s_rin_tin))


def quantum_cooperativity(mode, cavity, s_rin_tin):
    if s_rin_tin < 0:
        raise ValueError("TIN level must be non-negative")
    nu = cavity.detuning_nu
    c0 = vacuum_cooperativity(mode, cavity)
    n_th = thermal_occupation(mode)
    n_c = cavity.n_cav
    s_zp = zero_point_detuning_psd(mode, cavity)
    if n_c > 0:
        cq = cq_with_tin(n_c, c0, n_th, cavity.kappa, s_rin_tin, nu)
    else:
        cq = 0.0
    if s_rin_tin > 0:
        bound = math.sqrt(2 * s_zp / n_th / s_rin_tin) / (1 + nu * nu)
    else:
        bound = math.inf
    return CooperativityReport(
        c0=c0,
        n_th=n_th,
        cq_ideal=c0 * n_c / n_th,
        cq_with_tin=cq,
        cq_upper_bound=bound,
        n_c_optimal=optimal_photon_number(c0, n_th, cavity.kappa, s_rin_tin),
        photon_number_ok=n_c >= (1 + nu * nu) * n_th / c0,
        stability_ok=mode.q_factor >= 2 * nu / (1 + nu * nu) * n_th,
        tin_ok=s_rin_tin <= 2 * s_zp / n_th / (1 + nu * nu) ** 2,
    )


def resonant_cq_bound(mode, cavity, s_rin_tin):
    """Upper bound sqrt((2 S_nu^ZP / n_th) / S_TIN) on C_q at nu = 0."""
    s_zp = zero_point_detuning_psd(mode, cavity)
    return math.sqrt(2 * s_zp / thermal_occupation(mode) / s_rin_tin)


@dataclass(frozen=True)
class LandscapePoint:
    kappa: float
    p_in: float
    nu: float
    temperature: float
    cq: float
    n_c: float = 0.0
    stable: bool = True


@dataclass(frozen=True)
class TinReference:
    """Measured or simulated TIN level used to extrapolate across a landscape.

    S_TIN scales as (G/kappa)^4 T^2 from this reference point.
    """

    s_rin_tin: float
    kappa: float
    temperature: float
    coupling_G: float
    kappa_exponent: float = -4.0
    temperature_exponent: float = 2.0
    coupling_exponent: float = 4.0

    def at(self, kappa, temperature, coupling_G=None):
        g = self.coupling_G if coupling_G is None else coupling_G
        return (self.s_rin_tin
                * (kappa / self.kappa) ** self.kappa_exponent
                * (temperature / self.temperature) ** self.temperature_exponent
                * (g / self.coupling_G) ** self.coupling_exponent)


def _landscape_row(base, kappa, p_in_range, nu, temperature, tin_ref):
    system = base.with_temperature(temperature)
    mode = system.probe
    cavity = system.cavity.replace(kappa=kappa, detuning_nu=nu)
    s_tin = tin_ref.at(kappa, temperature, mode.coupling_G)
    c0 = vacuum_cooperativity(mode, cavity)
    n_th = thermal_occupation(mode)
    row = []
    for p in p_in_range:
        n_c = photon_number_from_power(p, cavity)
        dba = dynamical_backaction(mode, cavity.replace(n_cav=n_c))
        if not dba.stable:
            row.append(LandscapePoint(kappa, p, nu, temperature, 0.0, n_c, False))
            continue
        cq = cq_with_tin(n_c, c0, n_th, kappa, s_tin, nu) if n_c > 0 else 0.0
        row.append(LandscapePoint(kappa, p, nu, temperature, cq, n_c, True))
    return row


def cq_landscape(base, kappa_range, p_in_range, nu, temperatures, tin_ref, threads=1):
    """C_q over a (kappa, P_in, T) grid.

    Points are returned ordered by temperature, then kappa, then power,
    regardless of ``threads``. Unstable points carry ``cq = 0``.
    """
    kappa_range = np.asarray(kappa_range, dtype=float)
    p_in_range = np.asarray(p_in_range, dtype=float)
    for name, r in (("kappa_range", kappa_range), ("p_in_range", p_in_range)):
        if np.any(r <= 0) or np.any(np.diff(r) <= 0):
            raise ValueError(f"{name} must be positive and increasing")
    jobs = [(k, t) for t in temperatures for k in kappa_range]

    def run(job):
        k, t = job
        return _landscape_row(base, k, p_in_range, nu, t, tin_ref)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    return [p for row in rows for p in row]


@dataclass(frozen=True)
class KappaOptimum:
    kappa: float
    temperature: float
    n_c_closed_form: float
    n_c_numeric: float
    p_in_optimal: float
    cq_max_numeric: float
    cq_bound: float


def optimum_for_kappa(base, kappa, nu, temperature, tin_ref):
    """Maximize C_q over photon number at fixed kappa, numerically and in closed form."""
    system = base.with_temperature(temperature)
    mode = system.probe
    cavity = system.cavity.replace(kappa=kappa, detuning_nu=nu)
    s_tin = tin_ref.at(kappa, temperature, mode.coupling_G)
    c0 = vacuum_cooperativity(mode, cavity)
    n_th = thermal_occupation(mode)
    n_star = optimal_photon_number(c0, n_th, kappa, s_tin)
    res = optimize.minimize_scalar(
        lambda ln: -cq_with_tin(math.exp(ln), c0, n_th, kappa, s_tin, nu),
        bracket=(math.log(n_star) - 5, math.log(n_star) + 5),
        method="brent", tol=1e-12)
    n_num = math.exp(res.x)
    p_per_photon = photon_number_from_power(1.0, cavity)
    bound = math.sqrt(2 * zero_point_detuning_psd(mode, cavity) / n_th / s_tin) / (1 + nu * nu)
    return KappaOptimum(kappa, temperature, n_star, n_num, n_num / p_per_photon,
                        -res.fun, bound)


def threshold_power(base, kappa, nu, temperature):
    """Input power at which QBA equals thermal force noise, n_c = (1+nu^2) n_th / C0."""
    system = base.with_temperature(temperature)
    mode = system.probe
    cavity = system.cavity.replace(kappa=kappa, detuning_nu=nu)
    n_c = (1 + nu * nu) * thermal_occupation(mode) / vacuum_cooperativity(mode, cavity)
    return n_c / photon_number_from_power(1.0, cavity)
