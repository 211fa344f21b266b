import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tinsim.constants import K_B, TWO_PI
from tinsim.params import CavityParams, MechanicalMode, SystemParams
from tinsim.spectra import (
    AliasingError,
    FrequencyGrid,
    InstabilityError,
    NoiseBudget,
    Psd,
    Sidedness,
    SpectrumError,
    Units,
    coherence,
    cross_spectrum,
    effective_susceptibility,
    mode_thermal_psd,
    multimode_frequency_noise,
    self_convolve,
    thermal_force_density,
    welch_average_count,
    welch_psd,
)


def _direct_self_convolution(values, df):
    """Reference: mirror to two-sided, np.convolve, keep f >= 0, times 4."""
    two = np.concatenate([values[:0:-1], values]) / 2
    full = np.convolve(two, two) * df
    n = values.size
    return 4 * full[2 * (n - 1):]


# --- self convolution -----------------------------------------------------------------

def test_self_convolve_matches_direct_convolution():
    rng = np.random.default_rng(1)
    grid = FrequencyGrid(0.0, 0.5, 200)
    v = rng.random(200)
    v[150:] = 0
    out = self_convolve(Psd(grid, v, Units.PER_HZ))
    ref = _direct_self_convolution(v, grid.df)
    assert out.grid.n_points == ref.size
    np.testing.assert_allclose(out.values, ref, rtol=1e-9, atol=1e-12 * ref.max())


def test_self_convolve_output_grid_doubles_span():
    grid = FrequencyGrid(0.0, 1.0, 100)
    v = np.zeros(100)
    v[10] = 1.0
    out = self_convolve(Psd(grid, v, Units.PER_HZ))
    assert out.grid.df == grid.df
    assert out.grid.f_stop == pytest.approx(2 * grid.f_stop)


def test_self_convolve_of_line_gives_sum_and_difference():
    grid = FrequencyGrid(0.0, 1.0, 200)
    v = np.zeros(200)
    v[[30, 50]] = 1.0
    out = self_convolve(Psd(grid, v, Units.PER_HZ))
    peaks = set(np.flatnonzero(out.values > 1e-9 * out.values.max()))
    assert {0, 20, 60, 80, 100} <= peaks
    assert peaks <= {0, 20, 60, 80, 100}


def test_self_convolve_gaussian_variance_identity():
    # var(x^2) = 2 sigma^4 for zero-mean Gaussian x
    grid = FrequencyGrid(0.0, 0.1, 4000)
    f = grid.frequencies
    v = np.exp(-0.5 * ((f - 100) / 5) ** 2)
    s = Psd(grid, v, Units.PER_HZ)
    sigma2 = v.sum() * grid.df
    out = self_convolve(s)
    # the f = 0 bin straddles the band edge and counts half
    power = (out.values.sum() - out.values[0] / 2) * out.grid.df
    assert power == pytest.approx(2 * sigma2 ** 2, rel=1e-4)


def test_self_convolve_time_domain_monte_carlo():
    # band-limited Gaussian noise, squared, versus the convolution of its PSD
    rng = np.random.default_rng(5)
    fs, n = 1000.0, 2 ** 20
    spec = np.fft.rfft(rng.standard_normal(n))
    fr = np.fft.rfftfreq(n, 1 / fs)
    spec[(fr < 50) | (fr > 80)] = 0
    x = np.fft.irfft(spec, n)
    x /= x.std()
    seg = 4000
    s_x = welch_psd(x, fs, seg, units=Units.PER_HZ)
    s_sq = welch_psd(x * x - np.mean(x * x), fs, seg, units=Units.PER_HZ)
    grid = FrequencyGrid(0.0, s_x.grid.df, s_x.grid.n_points)
    predicted = self_convolve(Psd(grid, s_x.values, Units.PER_HZ)).resampled(s_sq.grid)
    band = (10.0, 25.0)
    ratio = s_sq.band_mean(*band) / predicted.band_mean(*band)
    assert ratio == pytest.approx(1.0, rel=0.05)
    band = (135.0, 155.0)
    ratio = s_sq.band_mean(*band) / predicted.band_mean(*band)
    assert ratio == pytest.approx(1.0, rel=0.05)


def test_self_convolve_rejects_aliasing():
    grid = FrequencyGrid(0.0, 1.0, 100)
    v = np.zeros(100)
    v[95] = 1.0
    with pytest.raises(AliasingError):
        self_convolve(Psd(grid, v, Units.PER_HZ))


def test_self_convolve_rejects_two_sided():
    grid = FrequencyGrid(0.0, 1.0, 10)
    with pytest.raises(SpectrumError):
        self_convolve(Psd(grid, np.ones(10), Units.PER_HZ, Sidedness.TWO_SIDED))


def test_self_convolve_offset_grid_equals_zero_filled():
    v = np.zeros(100)
    v[20:40] = 1.0
    full = self_convolve(Psd(FrequencyGrid(0.0, 1.0, 100), v, Units.PER_HZ))
    offset = self_convolve(Psd(FrequencyGrid(5.0, 1.0, 95), v[5:], Units.PER_HZ))
    np.testing.assert_allclose(offset.values, full.values, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(8, 64), elements=st.floats(0, 1)))
def test_self_convolve_properties(v):
    v = v.copy()
    v[int(0.85 * v.size):] = 0
    s = Psd(FrequencyGrid(0.0, 1.0, v.size), v, Units.PER_HZ)
    out = self_convolve(s)
    assert np.all(out.values >= 0)
    np.testing.assert_allclose(out.values, _direct_self_convolution(v, 1.0),
                               rtol=1e-7, atol=1e-9 * max(v.max(), 1e-300) ** 2)
    scaled = self_convolve(s.scaled(3.0))
    np.testing.assert_allclose(scaled.values, 9 * out.values, rtol=1e-9, atol=1e-12)


# --- thermal spectra -------------------------------------------------------------------

def _mode(f=1000.0, q=100.0, t=300.0, model="viscous"):
    return MechanicalMode(1e-12, TWO_PI * f, TWO_PI * f / q, 1e12, t, model)


def test_thermal_psd_equipartition_area():
    mode = _mode()
    grid = FrequencyGrid(0.0, 0.05, 2_000_000)
    psd = mode_thermal_psd(mode, grid)
    area = psd.integrate()
    assert area == pytest.approx(K_B * 300 / (1e-12 * mode.omega_m ** 2), rel=2e-3)


def test_bin_average_preserves_unresolved_area():
    mode = _mode(q=1e7)
    grid = FrequencyGrid(0.0, 1.0, 5000)
    psd = mode_thermal_psd(mode, grid, bin_average=True)
    area = psd.values.sum() * grid.df
    assert area == pytest.approx(K_B * 300 / (1e-12 * mode.omega_m ** 2), rel=1e-3)
    point = mode_thermal_psd(mode, grid)
    assert point.values.sum() * grid.df > 10 * area  # on-resonance sample overshoots


def test_bin_average_matches_point_sampling_when_resolved():
    # linewidth 1 Hz sampled at 0.02 Hz: bin integral ~ point value
    mode = _mode(q=1000)
    grid = FrequencyGrid(900.0, 0.02, 10000)
    a = mode_thermal_psd(mode, grid).values
    b = mode_thermal_psd(mode, grid, bin_average=True).values
    np.testing.assert_allclose(b, a, rtol=2e-3)


def test_structural_damping_force_and_singularity():
    mode = _mode(model="structural")
    w = np.array([mode.omega_m / 2, mode.omega_m, 2 * mode.omega_m])
    sf = thermal_force_density(mode, w)
    np.testing.assert_allclose(sf / sf[1], [2.0, 1.0, 0.5])
    with pytest.raises(SpectrumError):
        thermal_force_density(mode, np.array([0.0]))


def test_effective_susceptibility_peak_and_instability():
    mode = _mode()
    grid = FrequencyGrid(0.0, 1.0, 3000)
    chi = effective_susceptibility(mode, TWO_PI * 10, 0.0, grid)
    assert grid.frequencies[np.argmax(chi.magnitude_squared)] == pytest.approx(1010.0, abs=1.0)
    with pytest.raises(InstabilityError):
        effective_susceptibility(mode, 0.0, -2 * mode.gamma_m, grid)
    with pytest.raises(InstabilityError):
        effective_susceptibility(mode, -2 * mode.omega_m, 0.0, grid)


def test_multimode_frequency_noise_sums_modes():
    m1, m2 = _mode(1000.0), _mode(2500.0)
    cav = CavityParams(TWO_PI * 1e6)
    grid = FrequencyGrid(0.0, 1.0, 6000)
    both = multimode_frequency_noise(SystemParams([m1, m2], cav), grid)
    k = cav.kappa
    ref = sum(4 * m.coupling_G ** 2 / k ** 2 * mode_thermal_psd(m, grid).values for m in (m1, m2))
    np.testing.assert_allclose(both.values, ref, rtol=1e-12)


def test_multimode_frequency_noise_requires_grid_coverage():
    cav = CavityParams(TWO_PI * 1e6)
    with pytest.raises(SpectrumError):
        multimode_frequency_noise(SystemParams([_mode(5000.0)], cav), FrequencyGrid(0.0, 1.0, 100))


# --- Psd and estimators ----------------------------------------------------------------

def test_psd_validation():
    grid = FrequencyGrid(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        Psd(grid, [1.0, -1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        Psd(grid, [1.0, 2.0])
    a = Psd(grid, np.ones(4), Units.PER_HZ)
    with pytest.raises(SpectrumError):
        a + Psd(grid, np.ones(4), Units.M2_PER_HZ)
    with pytest.raises(SpectrumError):
        a + Psd(FrequencyGrid(0.0, 2.0, 4), np.ones(4), Units.PER_HZ)


def test_welch_white_noise_level():
    rng = np.random.default_rng(2)
    fs, sigma = 1000.0, 0.3
    x = sigma * rng.standard_normal(200_000)
    psd = welch_psd(x, fs, 1000)
    assert psd.band_mean(50, 450) == pytest.approx(2 * sigma ** 2 / fs, rel=0.02)


def test_welch_sinusoid_power():
    fs, n = 1000.0, 100_000
    t = np.arange(n) / fs
    x = 2.0 * np.sin(TWO_PI * 125.0 * t)
    psd = welch_psd(x, fs, 1000)
    assert psd.band_power(120, 130) == pytest.approx(2.0, rel=0.02)


def test_welch_average_count():
    assert welch_average_count(10_000, 1000, 0.5) == 19
    with pytest.raises(SpectrumError):
        welch_psd(np.zeros(100), 1.0, 1000)


def test_coherence_of_identical_and_independent_signals():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(100_000)
    y = rng.standard_normal(100_000)
    c_same = coherence(x, 2 * x, 1000.0, 1000)
    assert np.allclose(c_same.coherence.values[1:-1], 1.0, atol=1e-9)
    c_ind = coherence(x, y, 1000.0, 1000)
    n = c_ind.n_avg
    assert c_ind.coherence.values[1:-1].mean() == pytest.approx(1 / n, rel=0.2)


def test_cross_spectrum_phase_sign():
    fs, n = 1000.0, 50_000
    t = np.arange(n) / fs
    a = np.sin(TWO_PI * 100 * t)
    b = np.sin(TWO_PI * 100 * t - np.pi / 2)
    cs = cross_spectrum(a, b, fs, 1000)
    k = cs.grid.index_of(100.0)
    assert abs(abs(cs.phase[k]) - np.pi / 2) < 0.05


# --- budgets --------------------------------------------------------------------------

def test_noise_budget_total_and_dominance():
    grid = FrequencyGrid(0.0, 1.0, 10)
    a = Psd(grid, np.linspace(0, 1, 10), Units.PER_HZ)
    b = Psd(grid, np.linspace(1, 0, 10), Units.PER_HZ)
    nb = NoiseBudget({"a": a, "b": b})
    np.testing.assert_array_equal(nb.total.values, a.values + b.values)
    assert nb.dominant()[0] == "b" and nb.dominant()[-1] == "a"
    (_, _, dom, _), = nb.dominance([(6.0, 9.0)])
    assert dom == "a"
    single = NoiseBudget({"a": a})
    np.testing.assert_array_equal(single.total.values, a.values)
    with pytest.raises(ValueError):
        NoiseBudget({})
