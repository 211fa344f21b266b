"""Calibration pipeline: g0 from a phase-modulation tone, intracavity photon
number from optical-spring shifts, thermal peak fits, and noise budgets.

Each fit has a matching synthetic generator so the pipeline can be
round-tripped against known truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .constants import HBAR, K_B, TWO_PI
from .params import DampingModel, MechanicalMode, vacuum_coupling_rate
from .spectra import (
    FrequencyGrid,
    NoiseBudget,
    Psd,
    SpectrumError,
    Units,
    mode_thermal_psd,
)

DEFAULT_T_EFF = 300.0
DEFAULT_MASK_BINS = 2


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationTone:
    beta: float  # rad
    omega_mod: float  # rad/s

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.omega_mod > 0:
            raise ValueError("omega_mod must be > 0")

    @property
    def area(self):
        """Tone power in detuning units, (beta omega_mod)^2 / 2."""
        return (self.beta * self.omega_mod) ** 2 / 2


# --- g0 from a calibration tone ------------------------------------------------

def _window_area(spectrum, f_center, half_width, floor_width):
    """Integrated peak power in a window, minus the median level of the flanks."""
    f = spectrum.frequencies
    inner = np.abs(f - f_center) <= half_width
    flank = (np.abs(f - f_center) > half_width) & (np.abs(f - f_center) <= half_width + floor_width)
    if np.count_nonzero(inner) < 1 or np.count_nonzero(flank) < 2:
        raise CalibrationError(f"peak at {f_center:g} Hz is not resolved on this grid")
    floor = np.median(spectrum.values[flank])
    return float(np.sum(spectrum.values[inner] - floor) * spectrum.grid.df)


def thermal_peak_area(spectrum, mode, half_width_linewidths=None):
    """Area of a thermal peak from a Lorentzian-plus-floor fit (falls back to
    window integration if the peak spans too few bins to fit)."""
    f = spectrum.frequencies
    df = spectrum.grid.df
    lw = mode.gamma_m / TWO_PI
    hw = max(20 * lw, 10 * df) if half_width_linewidths is None else half_width_linewidths * lw
    if lw < 2 * df:
        # unresolved: the peak power sits in a few bins, integrate it directly
        return _window_area(spectrum, mode.f_m, hw, hw)
    sel = np.abs(f - mode.f_m) <= hw
    if np.count_nonzero(sel) < 8:
        raise CalibrationError("thermal peak is not resolved on this grid")
    x, y = f[sel], spectrum.values[sel]
    scale = y.max()

    a0 = max((y.sum() - y.min() * y.size) * df, scale * df)
    w0 = max(lw, df)
    b0 = max(y.min(), scale * 1e-12)

    def model(p):
        a, fc, w, b = a0 * np.exp(p[0]), mode.f_m + p[1] * df, w0 * np.exp(p[2]), b0 * np.exp(p[3])
        return a * (w / (2 * np.pi)) / ((x - fc) ** 2 + (w / 2) ** 2) + b

    # log residuals weight every bin equally under chi-square scatter
    pos = y > 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = optimize.least_squares(lambda p: np.log(model(p)[pos]) - np.log(y[pos]),
                                     np.zeros(4))
    if res.success and np.all(np.isfinite(res.x)):
        return float(a0 * math.exp(res.x[0]))
    return _window_area(spectrum, mode.f_m, hw, hw)


def g0_from_tone(spectrum, tone, mode, t_eff=DEFAULT_T_EFF, tone_bins=4):
    """Vacuum coupling rate (rad/s) from the ratio of thermal-peak to tone area.

    g0 = omega_mod beta sqrt(hbar omega_m A_th / (4 k_B T_eff A_tone)).
    Any overall scale of ``spectrum`` cancels.
    """
    f_tone = tone.omega_mod / TWO_PI
    if f_tone > spectrum.grid.f_stop:
        raise CalibrationError("tone lies outside the spectrum")
    hw = tone_bins * spectrum.grid.df
    a_tone = _window_area(spectrum, f_tone, hw, 4 * hw)
    a_th = thermal_peak_area(spectrum, mode)
    if a_tone <= 0 or a_th <= 0:
        raise CalibrationError("negative peak area; check the peak locations")
    return tone.omega_mod * tone.beta * math.sqrt(
        HBAR * mode.omega_m * a_th / (4 * K_B * t_eff * a_tone))


def _welch_scatter(values, n_avg, rng):
    """Multiply by the chi-square scatter of an ``n_avg``-segment estimate."""
    if rng is None or not n_avg:
        return values
    return values * rng.gamma(n_avg, 1.0 / n_avg, size=values.shape)


def synthetic_tone_spectrum(mode, g0, tone, grid, t_eff=DEFAULT_T_EFF, floor=None,
                            n_avg=None, rng=None, bin_average=False):
    """Cavity detuning spectrum (rad^2/s^2/Hz) with a thermal peak of area
    2 g0^2 k_B T_eff / (hbar omega_m) and a tone of area (beta omega_mod)^2/2.

    ``bin_average`` stores bin-integrated thermal power, as an analyzer with
    resolution coarser than the linewidth would."""
    x_zp = math.sqrt(HBAR / (2 * mode.mass * mode.omega_m))
    hot = mode.replace(temperature=t_eff)
    sx = mode_thermal_psd(hot, grid, bin_average=bin_average)
    values = (g0 / x_zp) ** 2 * sx.values
    if floor is None:
        floor = 1e-6 * values.max()
    # only the stochastic part scatters; a coherent tone has the same power
    # in every segment
    values = _welch_scatter(values + floor, n_avg, rng)
    k = grid.index_of(tone.omega_mod / TWO_PI)
    kernel = np.array([0.25, 0.5, 0.25])  # Hann-window leakage of a bin-centred tone
    values[k - 1:k + 2] += tone.area * kernel / grid.df
    return Psd(grid, values, Units.RAD2_PER_HZ)


# --- photon number from the optical spring --------------------------------------

def spring_shape(nu, g0, kappa):
    """Optical-spring shift per resonant photon: 4 nu g0^2 / (kappa (1 + nu^2)^2)."""
    nu = np.asarray(nu, dtype=float)
    return 4 * nu * g0 ** 2 / (kappa * (1 + nu ** 2) ** 2)


@dataclass(frozen=True)
class SpringFit:
    n_c: float  # resonant photon number n_c(nu = 0)
    residuals: np.ndarray  # rad/s
    rms_residual: float


def nc_from_spring_fit(shifts, mode, cavity):
    """Least-squares n_c(nu=0) from (nu, delta_omega) pairs.

    The model is linear in n_c, so the fit is the closed-form projection.
    """
    data = np.asarray(shifts, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 3:
        raise CalibrationError("need at least three (nu, delta_omega) points")
    nu, dw = data[:, 0], data[:, 1]
    s = spring_shape(nu, vacuum_coupling_rate(mode), cavity.kappa)
    ss = float(s @ s)
    if ss == 0:
        raise CalibrationError("all detunings are zero; the spring carries no information")
    n_c = float(s @ dw) / ss
    resid = dw - n_c * s
    return SpringFit(n_c, resid, float(np.sqrt(np.mean(resid ** 2))))


def synthetic_spring_shifts(mode, cavity, n_c0, nus, rel_noise=0.0, rng=None):
    """Spring shifts from the full dynamical-backaction kernel at each detuning."""
    from .backaction import dynamical_backaction
    out = []
    for nu in nus:
        cav = cavity.replace(detuning_nu=float(nu), n_cav=n_c0 / (1 + nu * nu))
        dw = dynamical_backaction(mode, cav).spring_shift
        if rng is not None and rel_noise:
            dw *= 1 + rel_noise * rng.standard_normal()
        out.append((float(nu), dw))
    return out


@dataclass(frozen=True)
class EtaFit:
    eta: float
    slope: float  # photons per W
    intercept: float


def eta_from_power_sweep(p_in, n_c, cavity):
    """Coupling efficiency from the slope of n_c(nu=0) against input power:
    n_c = 4 eta P_in / (hbar omega_L kappa)."""
    p_in = np.asarray(p_in, dtype=float)
    n_c = np.asarray(n_c, dtype=float)
    if p_in.size < 2:
        raise CalibrationError("need at least two powers")
    slope, intercept = np.polyfit(p_in, n_c, 1)
    eta = slope * HBAR * cavity.omega_laser * cavity.kappa / 4
    return EtaFit(float(eta), float(slope), float(intercept))


def synthetic_power_sweep(slope, p_in):
    """Noiseless n_c(nu=0) = slope * P_in line."""
    p_in = np.asarray(p_in, dtype=float)
    return slope * p_in


# --- thermal peak fits ------------------------------------------------------------

@dataclass(frozen=True)
class PeakGuess:
    f_m: float  # Hz
    q: float
    mass: float
    model: DampingModel = DampingModel.VISCOUS


@dataclass(frozen=True)
class PeakFit:
    center: float  # rad/s
    linewidth: float  # rad/s
    area: float  # m^2
    mass_eff: float  # kg
    model: DampingModel
    mask: tuple  # excluded (f_lo, f_hi) in Hz
    temperature: float

    def __post_init__(self):
        if not self.linewidth > 0:
            raise ValueError("linewidth must be > 0")
        if not self.area > 0:
            raise ValueError("area must be > 0")

    @property
    def f_m(self):
        return self.center / TWO_PI

    @property
    def q_factor(self):
        return self.center / self.linewidth

    def as_mode(self, coupling_G=0.0):
        return MechanicalMode(self.mass_eff, self.center, self.linewidth, coupling_G,
                              self.temperature, self.model)


def _peak_model(omega, wm, gm, mass, temperature, model):
    chi2 = 1.0 / (mass ** 2 * ((wm ** 2 - omega ** 2) ** 2 + (omega * gm) ** 2))
    sf = 4 * K_B * temperature * mass * gm
    if model is DampingModel.STRUCTURAL:
        sf = sf * wm / omega
    return chi2 * sf


def _fit_window(f, values, center, lw, df, lo_gap, hi_gap, mask_bins):
    hw = min(lo_gap / 2, hi_gap / 2, max(200 * lw, 20 * df))
    sel = (np.abs(f - center) <= hw) & (f > 0)
    mask = np.abs(f - center) <= (mask_bins + 0.5) * df if mask_bins else np.zeros_like(sel)
    return sel, mask


def fit_thermal_peaks(spectrum, guesses, temperature=298.0, mask_bins=DEFAULT_MASK_BINS,
                      fit_floor=True, joint=True):
    """Fit each thermal peak for (omega_m, gamma_m, m) on log-scaled residuals.

    Bins within ``mask_bins`` of each peak centre are excluded. Each peak is
    first fitted alone over the half-distance to its neighbours (at most 200
    linewidths), with an optional white floor; with ``joint`` the incoherent
    sum of all peaks is then refined together so that neighbouring wings are
    accounted for.
    """
    if spectrum.units is not Units.M2_PER_HZ:
        raise SpectrumError("thermal peak fits expect a displacement spectrum in m^2/Hz")
    if not guesses:
        raise CalibrationError("no peaks to fit")
    f = spectrum.frequencies
    df = spectrum.grid.df
    values = spectrum.values
    refined = []
    for g in sorted(guesses, key=lambda g: g.f_m):
        lw = g.f_m / g.q
        # move the centre to the local maximum so the mask sits on the peak
        near = np.flatnonzero(np.abs(f - g.f_m) <= max(3 * lw, 3 * df))
        if near.size:
            g = PeakGuess(float(f[near[np.argmax(values[near])]]), g.q, g.mass, g.model)
        refined.append(g)
    centers = np.array([g.f_m for g in refined])

    def unpack(p, g, lw):
        return (TWO_PI * g.f_m * (1 + p[0]), TWO_PI * lw * math.exp(p[1]),
                g.mass * math.exp(p[2]))

    params = []
    windows = []
    masks = np.zeros(f.size, dtype=bool)
    floors = []
    for i, g in enumerate(refined):
        lw = g.f_m / g.q
        lo_gap = g.f_m - centers[i - 1] if i > 0 else g.f_m
        hi_gap = centers[i + 1] - g.f_m if i + 1 < len(refined) else spectrum.grid.f_stop - g.f_m
        sel, mask = _fit_window(f, values, g.f_m, lw, df, lo_gap, hi_gap, mask_bins)
        masks |= mask
        use = sel & ~mask & (values > 0)
        if np.count_nonzero(use) < 6:
            raise CalibrationError(f"too few unmasked bins around {g.f_m:g} Hz")
        windows.append(sel)
        w = TWO_PI * f[use]
        logy = np.log(values[use])
        floor0 = max(np.min(values[use]) * 0.1, 1e-300)
        floors.append(floor0)

        def resid(p, g=g, lw=lw, w=w, logy=logy, floor0=floor0):
            s = _peak_model(w, *unpack(p, g, lw), temperature, g.model)
            if fit_floor:
                s = s + floor0 * math.exp(p[3])
            return np.log(s) - logy

        p0 = [0.0, 0.0, 0.0] + ([0.0] if fit_floor else [])
        res = optimize.least_squares(resid, p0, x_scale=[lw / g.f_m, 1, 1] + ([1] if fit_floor else []))
        params.append(res.x[:3])
        if fit_floor:
            floors[-1] = floor0 * math.exp(res.x[3])

    if joint and len(refined) > 1:
        use = np.any(windows, axis=0) & ~masks & (values > 0)
        w = TWO_PI * f[use]
        logy = np.log(values[use])
        floor0 = max(float(np.median(floors)), 1e-300)
        n = len(refined)

        def total(p):
            s = np.zeros(w.size)
            for i, g in enumerate(refined):
                s += _peak_model(w, *unpack(p[3 * i:3 * i + 3], g, g.f_m / g.q), temperature, g.model)
            if fit_floor:
                s += floor0 * math.exp(p[3 * n])
            return np.log(s) - logy

        p0 = np.concatenate(params + ([np.zeros(1)] if fit_floor else []))
        scale = np.concatenate([[1 / g.q, 1, 1] for g in refined] + ([[1.0]] if fit_floor else []))
        res = optimize.least_squares(total, p0, x_scale=scale)
        params = [res.x[3 * i:3 * i + 3] for i in range(n)]

    fits = []
    for g, p in zip(refined, params):
        wm, gm, mass = unpack(p, g, g.f_m / g.q)
        area = K_B * temperature / (mass * wm ** 2)
        mask = (g.f_m - (mask_bins + 0.5) * df, g.f_m + (mask_bins + 0.5) * df) if mask_bins else ()
        fits.append(PeakFit(wm, gm, area, mass, g.model, mask, temperature))
    return fits


def synthetic_thermal_spectrum(modes, grid, floor=0.0, n_avg=None, rng=None, bin_average=False):
    """Incoherent sum of thermal peaks plus a white floor, optionally with
    Welch-like chi-square scatter."""
    total = np.full(grid.n_points, float(floor))
    for m in modes:
        total += mode_thermal_psd(m, grid, bin_average=bin_average).values
    return Psd(grid, _welch_scatter(total, n_avg, rng), Units.M2_PER_HZ)


# --- noise budgets ------------------------------------------------------------------

TIN_DOMINANCE_DB = 30.0


@dataclass(frozen=True)
class BudgetReport:
    s_y: NoiseBudget
    s_rin: NoiseBudget
    approximate_y: bool
    tin_over_thermal_db: dict  # band -> min dB of TIN over thermal RIN in band

    def tin_dominated(self, band):
        return self.tin_over_thermal_db[band] > TIN_DOMINANCE_DB


# components kept by the S_y ~ S_x^imp + S_x^th + S_x^TIN approximation
APPROX_Y_COMPONENTS = ("imp", "thermal", "thermal_other", "tinba")


def assemble_budgets(y_components, rin_components, approximate_y=False, bands=()):
    """Stack displacement and RIN components into budgets.

    ``approximate_y`` keeps only imprecision, thermal and TINBA-driven motion.
    For each band, reports the minimum bin-wise ratio of TIN to thermal RIN
    in dB; a missing ``tin`` or ``thermal`` component counts as zero.
    """
    y = dict(y_components)
    if approximate_y:
        y = {k: v for k, v in y.items() if k in APPROX_Y_COMPONENTS}
    s_y = NoiseBudget(y)
    s_rin = NoiseBudget(rin_components)
    ratios = {}
    zero = Psd(s_rin.grid, np.zeros(s_rin.grid.n_points), Units.PER_HZ)
    for band in bands:
        if "tin" not in s_rin.components:
            ratios[tuple(band)] = -math.inf
            continue
        tin = s_rin["tin"]
        th = s_rin.components.get("thermal", zero)
        m = tin._mask(*band)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = 10 * np.log10(tin.values[m] / th.values[m])
        ratios[tuple(band)] = float(np.min(r)) if r.size else float("nan")
    return BudgetReport(s_y, s_rin, approximate_y, ratios)


def _flat(grid, value, units):
    return Psd(grid, np.full(grid.n_points, float(value)), units)


def model_budgets(system, grid, s_rin_tin=None, tin_reference_temperature=None,
                  imprecision_scale=1.0, s_f=None, s_rin_classical=None, bin_average=True,
                  approximate_y=False, bands=()):
    """Model S_y (apparent probe displacement) and S_RIN budgets for a system.

    TIN is computed from the multimode thermal spectrum by self-convolution
    unless ``s_rin_tin`` gives a measured broadband level; that level is then
    rescaled by (T / T_ref)^2 from ``tin_reference_temperature``. Components
    that vanish identically (e.g. without photons or coupling) are omitted.

    S_y components: imprecision (shot-limited kappa / (8 G^2 n_c), times
    ``imprecision_scale``), laser frequency noise S_f / G^2, thermal motion of
    of the probe and of the other modes referred to the probe, QBA and
    TINBA-driven probe motion.
    S_RIN components: shot, TIN, linear thermal, classical.
    """
    from .backaction import dynamical_backaction, qba_force_psd
    from .spectra import (mode_thermal_psd, multimode_frequency_noise, self_convolve,
                          thermal_force_density)
    from .transduction import linear_rin, shot_rin, tin_rin

    cav = system.cavity
    probe = system.probe
    nu = cav.detuning_nu
    dba = [dynamical_backaction(m, cav) for m in system.modes]
    if not all(d.stable for d in dba):
        raise CalibrationError("operating point is dynamically unstable")
    shifts = np.array([d.spring_shift for d in dba])
    damps = np.array([d.opt_damping for d in dba])

    # TIN needs the detuning spectrum from 0 to the grid end
    base = FrequencyGrid.spanning(grid.df if any(
        m.damping_model is DampingModel.STRUCTURAL for m in system.modes) else 0.0,
        grid.f_stop, grid.df)
    s_nu_base = multimode_frequency_noise(system, base, shifts, damps, bin_average)
    s_nu = s_nu_base.resampled(grid)

    rin = {}
    if cav.n_cav > 0:
        rin["shot"] = shot_rin(cav, grid)
    if s_rin_tin is not None:
        level = float(s_rin_tin)
        if tin_reference_temperature is not None:
            level *= (system.temperature / tin_reference_temperature) ** 2
        tin = _flat(grid, level, Units.PER_HZ)
    else:
        tin = tin_rin(self_convolve(s_nu_base), nu).resampled(grid)
    if np.any(tin.values > 0):
        rin["tin"] = tin
    th = linear_rin(s_nu, nu)
    if np.any(th.values > 0):
        rin["thermal"] = th
    if s_rin_classical:
        rin["classical"] = _flat(grid, s_rin_classical, Units.PER_HZ)
    if not rin:
        rin["shot"] = _flat(grid, 0.0, Units.PER_HZ)

    y = {}
    g = probe.coupling_G
    if g > 0 and cav.n_cav > 0:
        y["imp"] = _flat(grid, imprecision_scale * cav.kappa / (8 * g * g * cav.n_cav),
                         Units.M2_PER_HZ)
    if g > 0 and s_f:
        y["imp_f"] = _flat(grid, s_f / g ** 2, Units.M2_PER_HZ)
    y_probe_thermal = mode_thermal_psd(probe, grid, shifts[system.probe_index],
                                       damps[system.probe_index], bin_average)
    y["thermal"] = y_probe_thermal
    if g > 0 and len(system.modes) > 1:
        # other modes appear in the probe readout weighted by (G_j / G_p)^2
        other = s_nu.values * cav.kappa ** 2 / (4 * g * g) - y_probe_thermal.values
        y["thermal_other"] = Psd(grid, np.clip(other, 0.0, None), Units.M2_PER_HZ)
    if cav.n_cav > 0 and g > 0:
        # driven motion = thermal response x (force / thermal force), so bin
        # averaging of unresolved peaks carries over consistently
        x_th = y_probe_thermal.values
        f_th = thermal_force_density(probe, grid.omega)
        y["qba"] = Psd(grid, x_th * qba_force_psd(probe, cav, grid).values / f_th,
                       Units.M2_PER_HZ)
        if "tin" in rin:
            f_tin = (HBAR * g * cav.n_cav) ** 2 * rin["tin"].values
            y["tinba"] = Psd(grid, x_th * f_tin / f_th, Units.M2_PER_HZ)
    return assemble_budgets(y, rin, approximate_y, bands)


@dataclass(frozen=True)
class PowerSplit:
    a: float  # shot-noise coefficient, RIN * W
    b: float  # TIN level, RIN

    def __call__(self, p_in):
        return self.a / np.asarray(p_in, dtype=float) + self.b


def fit_power_split(p_in, band_rin):
    """Fit band-integrated RIN to A / P_in + B with relative weighting."""
    p = np.asarray(p_in, dtype=float)
    r = np.asarray(band_rin, dtype=float)
    if p.size < 2:
        raise CalibrationError("need at least two powers")
    design = np.column_stack([1 / p, np.ones_like(p)]) / r[:, None]
    (a, b), *_ = np.linalg.lstsq(design, np.ones_like(r), rcond=None)
    return PowerSplit(float(a), float(b))


def synthetic_power_series(a, b, p_in, rel_noise=0.0, rng=None):
    p = np.asarray(p_in, dtype=float)
    r = a / p + b
    if rng is not None and rel_noise:
        r = r * (1 + rel_noise * rng.standard_normal(p.shape))
    return r


def standard_grid(f_stop, df):
    return FrequencyGrid.spanning(0.0, f_stop, df)
