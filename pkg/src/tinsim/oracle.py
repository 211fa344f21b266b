"""Time-domain Langevin simulator of a multimode dispersive optomechanical system.

Each mode is advanced by the exact discrete-time propagator of a damped
oscillator with exact Gaussian thermal increments. The intracavity intensity
is the full Lorentzian of the instantaneous detuning (adiabatic cavity by
default), and radiation-pressure, feedback and tone forces act as a
zero-order-hold input over each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import _kernel
from .constants import HBAR, K_B, TWO_PI
from .params import SystemParams, rms_thermal_displacement
from .spectra import (
    FrequencyGrid,
    Psd,
    Units,
    coherence,
    effective_susceptibility,
    welch_average_count,
    welch_psd,
)
from .transduction import lorentzian

CHANNELS = ("displacement", "detuning", "intensity", "phase")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeedbackConfig:
    """Narrow-band derivative feedback from the homodyne signal.

    ``band_center`` and ``band_width`` are angular (rad/s); ``gain`` is the
    velocity gain in N s/m, so a lone target mode gains damping gain/m.
    """

    target_mode_indices: tuple
    gain: float
    band_center: float
    band_width: float

    def __post_init__(self):
        object.__setattr__(self, "target_mode_indices", tuple(self.target_mode_indices))
        if not self.band_width > 0:
            raise ValueError("feedback band_width must be > 0")
        if not self.gain >= 0:
            raise ValueError("feedback gain must be >= 0")


@dataclass(frozen=True)
class ForceTone:
    mode_index: int
    amplitude: float  # N
    omega: float  # rad/s


@dataclass(frozen=True)
class SimConfig:
    system: SystemParams
    fs: float
    duration: float
    seed: int = 0
    adiabatic_cavity: bool = True
    feedback: tuple = ()
    record: tuple = CHANNELS
    radiation_pressure: bool = True
    backaction_modes: tuple = None  # None -> every mode feels radiation pressure
    qba_force: bool = False
    shot_noise: bool = True
    imprecision_psd: float = None  # m^2/Hz one-sided; None -> shot-noise limit
    imprecision_scale: float = 1.0
    lock_bandwidth: float = None  # Hz; None -> f_min/100 with radiation pressure, else off
    tone: ForceTone = None
    max_samples: int = 60_000_000
    chunk: int = 1 << 16

    def __post_init__(self):
        fb = self.feedback
        if isinstance(fb, FeedbackConfig):
            fb = (fb,)
        object.__setattr__(self, "feedback", tuple(fb or ()))
        object.__setattr__(self, "record", tuple(self.record))
        unknown = set(self.record) - set(CHANNELS)
        if unknown:
            raise ValueError(f"unknown record channels {sorted(unknown)}")
        if self.backaction_modes is not None:
            object.__setattr__(self, "backaction_modes", tuple(self.backaction_modes))
        f_max = max(m.f_m for m in self.system.modes)
        if self.fs < 20 * f_max:
            raise ValueError(
                f"sample rate {self.fs:g} Hz is below 20x the highest mode frequency ({f_max:g} Hz)")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.n_samples > self.max_samples:
            raise ValueError(
                f"{self.n_samples} samples exceed the memory cap of {self.max_samples}")

    @property
    def n_samples(self):
        return int(round(self.duration * self.fs))

    @property
    def dt(self):
        return 1.0 / self.fs

    @property
    def shot_rin_level(self):
        """One-sided white shot RIN injected in the intensity channel (1/Hz)."""
        cav = self.system.cavity
        if not self.shot_noise or cav.n_cav <= 0:
            return 0.0
        return (8 / (cav.n_cav * cav.kappa)) / (1 + 4 * (cav.detuning / cav.kappa) ** 2)

    @property
    def imprecision_level(self):
        """One-sided white displacement imprecision on the phase channel (m^2/Hz)."""
        if self.imprecision_psd is not None:
            return float(self.imprecision_psd)
        cav = self.system.cavity
        g = self.system.probe.coupling_G
        if cav.n_cav <= 0 or g == 0:
            return 0.0
        return self.imprecision_scale * cav.kappa / (8 * g * g * cav.n_cav)

    @property
    def effective_lock_bandwidth(self):
        if self.lock_bandwidth is not None:
            return self.lock_bandwidth
        if self.radiation_pressure and self.system.cavity.n_cav > 0:
            return min(m.f_m for m in self.system.modes) / 100
        return 0.0

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class TimeSeriesRecord:
    config: SimConfig
    displacement: np.ndarray = None  # (n, modes), m
    detuning: np.ndarray = None  # total relative detuning nu(t)
    intensity: np.ndarray = None  # n_c(t) / <n_c>, with shot noise
    phase: np.ndarray = None  # apparent probe displacement y(t), m
    intensity_mean: float = float("nan")  # mean of the noiseless Lorentzian factor
    metadata: dict = field(default_factory=dict)

    @property
    def fs(self):
        return self.config.fs

    @property
    def n_samples(self):
        for ch in (self.intensity, self.phase, self.detuning, self.displacement):
            if ch is not None:
                return ch.shape[0]
        return 0

    @property
    def time(self):
        return np.arange(self.n_samples) / self.fs

    @property
    def channels(self):
        return tuple(c for c in CHANNELS if getattr(self, c) is not None)


def _propagator(mode, dt):
    w, g = mode.omega_m, mode.gamma_m
    wd = math.sqrt(w * w - g * g / 4)
    e = math.exp(-g * dt / 2)
    c, s = math.cos(wd * dt), math.sin(wd * dt)
    return e * np.array([[c + g / (2 * wd) * s, s / wd],
                         [-w * w * s / wd, c - g / (2 * wd) * s]])


def _step_cholesky(mode, A):
    kt = K_B * mode.temperature
    sigma = np.diag([kt / (mode.mass * mode.omega_m ** 2), kt / mode.mass])
    q = sigma - A @ sigma @ A.T
    l11 = math.sqrt(max(q[0, 0], 0.0))
    l21 = q[1, 0] / l11 if l11 > 0 else 0.0
    l22 = math.sqrt(max(q[1, 1] - l21 * l21, 0.0))
    return np.array([l11, l21, l22]), sigma


def _streams(seed, n_modes):
    """Independent counter-based (Philox) streams: one per mode, then
    imprecision and shot noise."""
    children = np.random.SeedSequence(seed).spawn(n_modes + 2)
    return children


def _generator(seq):
    return np.random.Generator(np.random.Philox(seq))


def simulate(config):
    """Run the time-domain model and return the recorded channels."""
    system = config.system
    modes = system.modes
    n = len(modes)
    cav = system.cavity
    dt = config.dt
    n_total = config.n_samples

    A = np.empty((n, 2, 2))
    chol = np.empty((n, 3))
    sigmas = []
    for j, m in enumerate(modes):
        A[j] = _propagator(m, dt)
        chol[j], sig = _step_cholesky(m, A[j])
        sigmas.append(sig)
    eq_gain = np.array([1 / (m.mass * m.omega_m ** 2) for m in modes])
    gk = np.array([2 * m.coupling_G / cav.kappa for m in modes])

    n0 = cav.n_cav_resonant
    nu0 = cav.detuning_nu
    l0 = float(lorentzian(nu0))
    ba = set(range(n)) if config.backaction_modes is None else set(config.backaction_modes)
    on = config.radiation_pressure
    fcoef = np.array([HBAR * m.coupling_G * n0 if (on and j in ba) else 0.0
                      for j, m in enumerate(modes)])
    qba_std = math.sqrt(config.shot_rin_level * config.fs / 2)
    qba_coef = np.array([HBAR * m.coupling_G * cav.n_cav * qba_std
                         if (config.qba_force and j in ba) else 0.0
                         for j, m in enumerate(modes)])

    f_lock = config.effective_lock_bandwidth
    lock_alpha = 1 - math.exp(-TWO_PI * f_lock * dt) if f_lock > 0 else 0.0
    lock = np.zeros(1)

    g_probe = system.probe.coupling_G
    if g_probe != 0:
        sensor_gain = np.array([m.coupling_G / g_probe for m in modes])
    else:
        sensor_gain = np.zeros(n)
        sensor_gain[system.probe_index] = 1.0
    imp_std = math.sqrt(config.imprecision_level * config.fs / 2)

    k = len(config.feedback)
    fb_b = np.zeros((k, 3))
    fb_a = np.zeros((k, 3))
    fb_gain = np.zeros((k, n))
    for i, fbc in enumerate(config.feedback):
        b, a = signal.iirpeak(fbc.band_center / TWO_PI, fbc.band_center / fbc.band_width,
                              fs=config.fs)
        fb_b[i], fb_a[i] = b / a[0], a / a[0]
        for j in fbc.target_mode_indices:
            fb_gain[i, j] = fbc.gain
    fb_state = np.zeros((k, 3))
    y_prev = np.zeros(1)

    tone = config.tone
    tone_mask = np.zeros(n)
    if tone is not None:
        tone_mask[tone.mode_index] = 1.0
        tone_amp, tone_w = tone.amplitude, tone.omega
    else:
        tone_amp, tone_w = 0.0, 0.0

    x_limit = np.array([1e6 * rms_thermal_displacement(m) if m.temperature > 0 else np.inf
                        for m in modes])

    rec = config.record
    out_x = np.empty((n_total if "displacement" in rec else 0, n))
    out_nu = np.empty(n_total if "detuning" in rec else 0)
    out_int = np.empty(n_total)  # always needed for the mean
    out_y = np.empty(n_total if "phase" in rec else 0)

    seqs = _streams(config.seed, n)
    mode_rngs = [_generator(s) for s in seqs[:n]]
    imp_rng = _generator(seqs[n])
    shot_rng = _generator(seqs[n + 1])

    state = np.empty((n, 2))
    for j, rng in enumerate(mode_rngs):
        sig = sigmas[j]
        state[j] = rng.standard_normal(2) * np.sqrt(np.diag(sig))

    kappa_half = cav.kappa / 2
    field_state = np.zeros(2)
    if not config.adiabatic_cavity:
        nu_start = nu0 + float(gk @ state[:, 0])
        field_state[:] = [1 / (1 + nu_start ** 2), nu_start / (1 + nu_start ** 2)]
    field_decay_dt = kappa_half * dt

    chunk = int(config.chunk)
    zeros = np.zeros(chunk)
    done = 0
    while done < n_total:
        c = min(chunk, n_total - done)
        therm = np.empty((c, n, 2))
        for j, rng in enumerate(mode_rngs):
            therm[:, j, :] = rng.standard_normal((c, 2))
        imp = imp_rng.standard_normal(c) * imp_std if imp_std > 0 else zeros[:c]
        shot = shot_rng.standard_normal(c)
        steps = _kernel.run_chunk(
            state, A, eq_gain, chol, therm, gk, fcoef, qba_coef, shot,
            nu0, l0, lock, lock_alpha, config.adiabatic_cavity, field_state, field_decay_dt,
            kappa_half, system.probe_index, sensor_gain, imp, fb_b, fb_a, fb_state, fb_gain,
            y_prev, tone_amp, tone_w, tone_mask, done * dt, dt, x_limit,
            out_x, out_nu, out_int, out_y, done)
        if steps < c:
            raise SimulationError(
                f"displacement exceeded 1e6 x_th at t = {(done + steps) * dt:.6g} s")
        done += c

    mean = float(out_int.mean())
    intensity = None
    if "intensity" in rec:
        intensity = out_int / mean
        rin_std = math.sqrt(config.shot_rin_level * config.fs / 2)
        if rin_std > 0:
            # regenerate the shot stream so the recorded shot noise is the same
            # realization that drove the optional QBA force
            replay = _generator(seqs[n + 1])
            done = 0
            while done < n_total:
                c = min(chunk, n_total - done)
                intensity[done:done + c] += rin_std * replay.standard_normal(c)
                done += c
    del out_int

    return TimeSeriesRecord(
        config=config,
        displacement=out_x if "displacement" in rec else None,
        detuning=out_nu if "detuning" in rec else None,
        intensity=intensity,
        phase=out_y if "phase" in rec else None,
        intensity_mean=mean,
        metadata={"shot_rin_level": config.shot_rin_level,
                  "imprecision_level": config.imprecision_level,
                  "lock_bandwidth_hz": f_lock},
    )


def measure_tin(record, segment_length, overlap=0.5, window="hann", linear_floor=None):
    """TIN estimate: Welch RIN of the intensity channel minus the injected shot
    floor (and an optional linearly-transduced floor), clipped at zero."""
    if record.intensity is None:
        raise ValueError("record has no intensity channel")
    rin = welch_psd(record.intensity, record.fs, segment_length, overlap, window, Units.PER_HZ)
    v = rin.values - record.config.shot_rin_level
    if linear_floor is not None:
        v = v - linear_floor.resampled(rin.grid).values
    return Psd(rin.grid, np.clip(v, 0, None), Units.PER_HZ)


@dataclass(frozen=True)
class ScalingReport:
    n_c: np.ndarray
    band_power: np.ndarray
    slope: float
    intercept: float


def band_power_series(records, band, segment_length, subtract_readout=True, background=0.0,
                      overlap=0.5):
    powers = []
    for rec in records:
        s_y = welch_psd(rec.phase, rec.fs, segment_length, overlap)
        p = s_y.band_power(*band)
        if subtract_readout:
            n_bins = np.count_nonzero(s_y._mask(*band))
            p -= rec.config.imprecision_level * n_bins * s_y.grid.df
        powers.append(p - background)
    return np.array(powers)


def measure_tinba(records, band, segment_length, subtract_readout=True, background=0.0,
                  overlap=0.5):
    """Log-log slope of band-integrated apparent displacement versus photon number."""
    if len(records) < 4:
        raise ValueError("need at least four photon-number points")
    n_c = np.array([r.config.system.cavity.n_cav for r in records])
    if np.log10(n_c.max() / n_c.min()) < 1.5 - 1e-9:
        raise ValueError("photon numbers must span at least 1.5 decades")
    p = band_power_series(records, band, segment_length, subtract_readout, background, overlap)
    if np.any(p <= 0):
        raise ValueError("band power is non-positive after floor subtraction")
    slope, intercept = np.polyfit(np.log10(n_c), np.log10(p), 1)
    return ScalingReport(n_c, p, float(slope), float(intercept))


@dataclass(frozen=True, eq=False)
class CoherenceMeasurement:
    coherence: Psd
    phase: np.ndarray
    predicted: Psd
    n_avg: int
    s_y: Psd
    s_rin: Psd

    @property
    def frequencies(self):
        return self.coherence.frequencies

    @property
    def bias(self):
        return 1.0 / self.n_avg


def measure_coherence(record, segment_length, overlap=0.5, window="hann"):
    """Phase-intensity coherence plus the prediction
    C ~ (S_x^TIN / S_y) (S_RIN^TIN / S_RIN) built from the same record."""
    if record.phase is None or record.intensity is None:
        raise ValueError("record needs phase and intensity channels")
    n_avg = welch_average_count(record.n_samples, segment_length, overlap)
    if n_avg < 50:
        raise ValueError(f"coherence needs >= 50 averages, got {n_avg}")
    coh = coherence(record.phase, record.intensity, record.fs, segment_length, overlap, window)
    s_y = welch_psd(record.phase, record.fs, segment_length, overlap, window)
    s_rin = welch_psd(record.intensity, record.fs, segment_length, overlap, window, Units.PER_HZ)
    s_tin = np.clip(s_rin.values - record.config.shot_rin_level, 0, None)
    system = record.config.system
    mode = system.probe
    cav = system.cavity
    from .backaction import dynamical_backaction
    dba = dynamical_backaction(mode, cav) if record.config.radiation_pressure else None
    shift = dba.spring_shift if dba else 0.0
    chi = effective_susceptibility(mode, shift, 0.0, s_y.grid)
    ba_on = (record.config.radiation_pressure and
             (record.config.backaction_modes is None
              or system.probe_index in record.config.backaction_modes))
    scale = (HBAR * mode.coupling_G * cav.n_cav_resonant) ** 2 if ba_on else 0.0
    s_x_tin = chi.magnitude_squared * scale * s_tin
    with np.errstate(divide="ignore", invalid="ignore"):
        pred = np.where((s_y.values > 0) & (s_rin.values > 0),
                        (s_x_tin / s_y.values) * (s_tin / s_rin.values), 0.0)
    pred = np.clip(pred, 0, 1)
    return CoherenceMeasurement(coh.coherence, coh.phase, Psd(s_y.grid, pred, Units.DIMENSIONLESS),
                                coh.n_avg, s_y, s_rin)


def default_segment(fs, df):
    """Segment length (samples) giving a Welch resolution of about ``df`` Hz."""
    return int(round(fs / df))


def expected_grid(fs, segment_length):
    n = segment_length // 2 + 1
    return FrequencyGrid(0.0, fs / segment_length, n)
