"""Power spectral densities: analytic thermomechanical models, convolution and
estimation from sampled records.

User-facing spectra are one-sided densities per Hz on a uniform grid of
ordinary frequencies. Two-sided spectra are only built transiently inside
:func:`self_convolve`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import signal

from .constants import K_B, TWO_PI
from .params import DampingModel


class Units(str, Enum):
    M2_PER_HZ = "m^2/Hz"
    PER_HZ = "1/Hz"
    N2_PER_HZ = "N^2/Hz"
    RAD2_PER_HZ = "rad^2/Hz"
    DIMENSIONLESS = "1"


class Sidedness(str, Enum):
    ONE_SIDED = "one_sided"
    TWO_SIDED = "two_sided"


class SpectrumError(ValueError):
    pass


class AliasingError(SpectrumError):
    pass


class InsufficientDataError(SpectrumError):
    pass


class InstabilityError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyGrid:
    f_start: float
    df: float
    n_points: int

    def __post_init__(self):
        if not self.df > 0:
            raise ValueError(f"df must be > 0, got {self.df}")
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @classmethod
    def spanning(cls, f_start, f_stop, df):
        n = int(round((f_stop - f_start) / df)) + 1
        return cls(f_start, df, n)

    @property
    def frequencies(self):
        return self.f_start + self.df * np.arange(self.n_points)

    @property
    def omega(self):
        return TWO_PI * self.frequencies

    @property
    def f_stop(self):
        return self.f_start + self.df * (self.n_points - 1)

    def index_of(self, f):
        return int(round((f - self.f_start) / self.df))

    def same_as(self, other, rtol=1e-9):
        return (self.n_points == other.n_points
                and np.isclose(self.df, other.df, rtol=rtol, atol=0)
                and np.isclose(self.f_start, other.f_start, rtol=0, atol=rtol * self.df))


@dataclass(frozen=True, eq=False)
class Psd:
    grid: FrequencyGrid
    values: np.ndarray
    units: Units = Units.M2_PER_HZ
    sidedness: Sidedness = Sidedness.ONE_SIDED

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} values, got shape {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("PSD values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "units", Units(self.units))
        object.__setattr__(self, "sidedness", Sidedness(self.sidedness))

    @property
    def frequencies(self):
        return self.grid.frequencies

    def _mask(self, f_lo, f_hi):
        f = self.frequencies
        lo = -np.inf if f_lo is None else f_lo
        hi = np.inf if f_hi is None else f_hi
        return (f >= lo) & (f <= hi)

    def integrate(self, f_lo=None, f_hi=None):
        """Trapezoidal integral over ``[f_lo, f_hi]`` (whole grid by default)."""
        m = self._mask(f_lo, f_hi)
        if m.sum() < 2:
            return 0.0
        return float(np.trapezoid(self.values[m], self.frequencies[m]))

    def band_power(self, f_lo, f_hi):
        """Bin-sum power ``sum(S) * df`` over bins inside ``[f_lo, f_hi]``."""
        return float(self.values[self._mask(f_lo, f_hi)].sum() * self.grid.df)

    def band_mean(self, f_lo, f_hi):
        m = self._mask(f_lo, f_hi)
        return float(self.values[m].mean()) if m.any() else float("nan")

    def at(self, f):
        return np.interp(f, self.frequencies, self.values)

    def scaled(self, factor, units=None):
        return Psd(self.grid, self.values * factor, units or self.units, self.sidedness)

    def __add__(self, other):
        self._check_compatible(other)
        return Psd(self.grid, self.values + other.values, self.units, self.sidedness)

    def _check_compatible(self, other):
        if not self.grid.same_as(other.grid):
            raise SpectrumError("spectra live on different grids")
        if self.units != other.units:
            raise SpectrumError(f"unit mismatch: {self.units.value} vs {other.units.value}")

    def resampled(self, grid):
        """Linear interpolation onto another grid (zero outside the source range)."""
        v = np.interp(grid.frequencies, self.frequencies, self.values, left=0.0, right=0.0)
        return Psd(grid, v, self.units, self.sidedness)


@dataclass(frozen=True, eq=False)
class Susceptibility:
    grid: FrequencyGrid
    values: np.ndarray  # complex, m/N

    @property
    def magnitude_squared(self):
        return np.abs(self.values) ** 2


def effective_susceptibility(mode, spring_shift, opt_damping, grid):
    """Mechanical response including an optical spring and optical damping.

    chi(w) = (1/m) / ((w_m + dw)^2 - w^2 + i w (g_m + g_opt))
    """
    w_eff = mode.omega_m + spring_shift
    g_eff = mode.gamma_m + opt_damping
    if w_eff <= 0:
        raise InstabilityError(f"optical spring drives the mode unstable (w_eff = {w_eff:g})")
    if g_eff <= 0:
        raise InstabilityError(f"total damping is non-positive ({g_eff:g} rad/s)")
    w = grid.omega
    chi = (1 / mode.mass) / ((w_eff ** 2 - w ** 2) + 1j * w * g_eff)
    return Susceptibility(grid, chi)


def thermal_force_density(mode, omega):
    """One-sided thermal force PSD (N^2/Hz) per the mode's damping model."""
    base = 4 * K_B * mode.temperature * mode.mass * mode.gamma_m
    if mode.damping_model is DampingModel.STRUCTURAL:
        omega = np.asarray(omega, dtype=float)
        if np.any(omega <= 0):
            raise SpectrumError("structural damping is singular at f = 0; start the grid above 0")
        return base * mode.omega_m / omega
    return np.full(np.shape(omega), base, dtype=float)


def thermal_displacement_psd(mode, chi):
    """One-sided thermal displacement spectrum |chi|^2 S_F^th in m^2/Hz."""
    s_f = thermal_force_density(mode, chi.grid.omega)
    return Psd(chi.grid, chi.magnitude_squared * s_f, Units.M2_PER_HZ)


def mode_thermal_psd(mode, grid, spring_shift=0.0, opt_damping=0.0, bin_average=False):
    """Thermal displacement spectrum of one mode.

    With ``bin_average`` the bins near resonance are scaled by the ratio of
    the Lorentzian's mean over the bin to its value at the bin centre, so
    peaks narrower than the grid spacing keep their area.
    """
    chi = effective_susceptibility(mode, spring_shift, opt_damping, grid)
    psd = thermal_displacement_psd(mode, chi)
    if not bin_average:
        return psd
    w_eff = mode.omega_m + spring_shift
    g_eff = mode.gamma_m + opt_damping
    f0 = w_eff / TWO_PI
    hw = g_eff / (2 * TWO_PI)  # half width at half maximum, Hz
    f = grid.frequencies
    near = np.abs(f - f0) <= max(3 * grid.df, 100 * hw)
    lo = f[near] - grid.df / 2
    hi = f[near] + grid.df / 2
    x = f[near] - f0
    # Lorentzian bin mean over Lorentzian point value: ~1 where the peak is
    # resolved, and restores the bin-integrated power where it is not
    bin_mean = (np.arctan((hi - f0) / hw) - np.arctan((lo - f0) / hw)) / (np.pi * grid.df)
    point = hw / (np.pi * (x * x + hw * hw))
    values = psd.values.copy()
    values[near] *= bin_mean / point
    return Psd(grid, values, Units.M2_PER_HZ)


def multimode_frequency_noise(system, grid, spring_shifts=None, opt_dampings=None,
                              bin_average=False):
    """Cavity frequency noise in relative-detuning units:
    S_nu = sum_n (4 G_n^2 / kappa^2) S_x^n, one-sided, 1/Hz.
    """
    kappa = system.cavity.kappa
    n = len(system.modes)
    shifts = np.zeros(n) if spring_shifts is None else spring_shifts
    damps = np.zeros(n) if opt_dampings is None else opt_dampings
    total = np.zeros(grid.n_points)
    for mode, dw, dg in zip(system.modes, shifts, damps):
        if mode.f_m > grid.f_stop:
            raise SpectrumError(
                f"mode at {mode.f_m:g} Hz lies above the grid end {grid.f_stop:g} Hz")
        sx = mode_thermal_psd(mode, grid, dw, dg, bin_average)
        total += 4 * mode.coupling_G ** 2 / kappa ** 2 * sx.values
    return Psd(grid, total, Units.PER_HZ)


# Wick prefactor as printed for a two-sided input / one-sided output density.
WICK_PREFACTOR = 4.0
# Multiplies WICK_PREFACTOR; pinned against the time-domain oracle.
WICK_CORRECTION = 1.0


def self_convolve(s, correction=WICK_CORRECTION):
    """Spectrum of the square of a zero-mean Gaussian process.

    The one-sided input ``s`` is mirrored into a symmetric two-sided density
    S2 = s/2 and the one-sided output

        S_sq(f) = 4 * correction * int S2(f') S2(f - f') df'

    is returned on a grid from 0 to twice the input's top frequency with the
    same spacing. The DC delta from the mean of the square is not included.
    Linear convolution is enforced by zero-padding the FFT to >= 2x length.
    """
    if s.sidedness is not Sidedness.ONE_SIDED:
        raise SpectrumError("self_convolve expects a one-sided input")
    g = s.grid
    offset = g.f_start / g.df
    k0 = int(round(offset))
    if abs(offset - k0) > 1e-6 or k0 < 0:
        raise SpectrumError("input grid must start at a non-negative multiple of df")
    v = np.concatenate([np.zeros(k0), s.values])
    total = v.sum()
    if total > 0:
        top = v[int(np.floor(0.9 * v.size)):].sum()
        if top > 1e-3 * total:
            raise AliasingError(
                f"{top / total:.2e} of the input power lies in the top 10% of the grid; "
                "extend the grid")
    n = v.size
    two_sided = np.concatenate([v[:0:-1], v]) / 2  # f = -(n-1)df .. (n-1)df
    m = two_sided.size
    nfft = 1 << int(np.ceil(np.log2(2 * m)))
    spec = np.fft.rfft(two_sided, nfft)
    conv = np.fft.irfft(spec * spec, nfft)[: 2 * m - 1] * g.df
    # conv index j <-> f = (j - 2(n-1)) df; keep f >= 0
    out = conv[2 * (n - 1):]
    out = np.clip(out, 0.0, None) * WICK_PREFACTOR * correction
    grid = FrequencyGrid(0.0, g.df, out.size)
    return Psd(grid, out, s.units, Sidedness.ONE_SIDED)


def _segment_count(n, nperseg, noverlap):
    return 1 + (n - nperseg) // (nperseg - noverlap)


def _welch_args(n, segment_length, overlap, window):
    segment_length = int(segment_length)
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if n < 2 * segment_length:
        raise InsufficientDataError(
            f"record of {n} samples is shorter than two segments of {segment_length}")
    noverlap = int(round(overlap * segment_length))
    return dict(window=window, nperseg=segment_length, noverlap=noverlap,
                detrend="constant", return_onesided=True, scaling="density")


def welch_psd(x, fs, segment_length, overlap=0.5, window="hann", units=Units.M2_PER_HZ):
    """One-sided Welch estimate. Integrates to the sample variance (window-power
    corrected); Hann window, 50% overlap and per-segment mean removal by default."""
    x = np.asarray(x, dtype=float)
    kw = _welch_args(x.size, segment_length, overlap, window)
    f, pxx = signal.welch(x, fs=fs, **kw)
    grid = FrequencyGrid(0.0, f[1] - f[0], f.size)
    return Psd(grid, np.clip(pxx, 0, None), units)


def welch_average_count(n_samples, segment_length, overlap=0.5):
    noverlap = int(round(overlap * segment_length))
    return _segment_count(n_samples, int(segment_length), noverlap)


@dataclass(frozen=True, eq=False)
class CrossSpectrum:
    grid: FrequencyGrid
    values: np.ndarray  # complex, one-sided
    n_avg: int

    @property
    def phase(self):
        return np.angle(self.values)


def cross_spectrum(a, b, fs, segment_length, overlap=0.5, window="hann"):
    """One-sided Welch cross spectrum S_ab = <conj(A) B>."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("records must have equal length")
    kw = _welch_args(a.size, segment_length, overlap, window)
    f, sab = signal.csd(a, b, fs=fs, **kw)
    grid = FrequencyGrid(0.0, f[1] - f[0], f.size)
    n_avg = _segment_count(a.size, kw["nperseg"], kw["noverlap"])
    return CrossSpectrum(grid, sab, n_avg)


@dataclass(frozen=True, eq=False)
class CoherenceResult:
    coherence: Psd
    phase: np.ndarray
    n_avg: int

    @property
    def frequencies(self):
        return self.coherence.frequencies


def coherence(a, b, fs, segment_length, overlap=0.5, window="hann"):
    """Magnitude-squared coherence |S_ab|^2 / (S_a S_b), clamped to [0, 1],
    with the cross-spectrum phase Arg[S_ab]."""
    sab = cross_spectrum(a, b, fs, segment_length, overlap, window)
    if sab.n_avg < 2:
        raise InsufficientDataError("coherence needs at least two averages")
    sa = welch_psd(a, fs, segment_length, overlap, window).values
    sb = welch_psd(b, fs, segment_length, overlap, window).values
    denom = sa * sb
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(denom > 0, np.abs(sab.values) ** 2 / denom, 0.0)
    c = np.clip(c, 0.0, 1.0)
    return CoherenceResult(Psd(sab.grid, c, Units.DIMENSIONLESS), sab.phase, sab.n_avg)


class NoiseBudget:
    """Named stack of spectra on one grid, plus their bin-wise sum."""

    def __init__(self, components):
        components = dict(components)
        if not components:
            raise ValueError("a budget needs at least one component")
        first = next(iter(components.values()))
        for name, psd in components.items():
            first._check_compatible(psd)
        self.components = components

    @property
    def grid(self):
        return next(iter(self.components.values())).grid

    @property
    def units(self):
        return next(iter(self.components.values())).units

    @property
    def total(self):
        values = np.zeros(self.grid.n_points)
        for psd in self.components.values():
            values = values + psd.values
        return Psd(self.grid, values, self.units)

    def __getitem__(self, name):
        return self.components[name]

    def __iter__(self):
        return iter(self.components)

    def dominant(self):
        """Name of the largest component in every bin."""
        names = list(self.components)
        stack = np.vstack([self.components[n].values for n in names])
        return np.array(names, dtype=object)[np.argmax(stack, axis=0)]

    def dominance(self, bands):
        """Largest component by band power for each ``(f_lo, f_hi)`` band."""
        out = []
        for lo, hi in bands:
            powers = {n: p.band_power(lo, hi) for n, p in self.components.items()}
            out.append((lo, hi, max(powers, key=powers.get), powers))
        return out
