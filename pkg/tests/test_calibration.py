import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinsim import calibration as cal
from tinsim.constants import HBAR, K_B, TWO_PI
from tinsim.params import (
    DEVICE_G0,
    CavityParams,
    MechanicalMode,
    SystemParams,
    device_cavity,
    device_mode,
    photon_number_from_power,
)
from tinsim.spectra import FrequencyGrid, Psd, SpectrumError, Units

# a resolved mode keeps the peak-area fit honest: 10 kHz, Q 1e3 on a 1 Hz grid
MODE = MechanicalMode.from_g0(1e-12, 10e3, 1e3, 2000.0)
GRID = FrequencyGrid.spanning(0.0, 30e3, 1.0)
TONE = cal.CalibrationTone(2.0, TWO_PI * 15e3)


def _g0(spectrum, tone=TONE, t_eff=cal.DEFAULT_T_EFF):
    return cal.g0_from_tone(spectrum, tone, MODE, t_eff)


# --- g0 from a calibration tone ---------------------------------------------------------

def test_tone_area():
    assert TONE.area == pytest.approx((2.0 * TWO_PI * 15e3) ** 2 / 2)
    with pytest.raises(ValueError):
        cal.CalibrationTone(0.0, 1.0)


def test_g0_recovered_from_noiseless_spectrum():
    spec = cal.synthetic_tone_spectrum(MODE, TWO_PI * 2000.0, TONE, GRID)
    assert _g0(spec) == pytest.approx(TWO_PI * 2000.0, rel=0.01)


def test_thermal_peak_area_matches_equipartition():
    # detuning-noise area of a thermal peak: 2 g0^2 k_B T / (hbar omega_m)
    g0 = TWO_PI * 2000.0
    spec = cal.synthetic_tone_spectrum(MODE, g0, TONE, GRID)
    expected = 2 * g0 ** 2 * K_B * cal.DEFAULT_T_EFF / (HBAR * MODE.omega_m)
    assert cal.thermal_peak_area(spec, MODE) == pytest.approx(expected, rel=0.01)


def test_g0_invariances():
    g0 = TWO_PI * 2000.0
    spec = cal.synthetic_tone_spectrum(MODE, g0, TONE, GRID)
    ref = _g0(spec)
    # an overall gain cancels
    assert _g0(spec.scaled(37.0)) == pytest.approx(ref, rel=1e-6)
    # doubling the modulation depth quadruples the tone area but leaves g0 fixed
    loud = cal.CalibrationTone(4.0, TONE.omega_mod)
    assert _g0(cal.synthetic_tone_spectrum(MODE, g0, loud, GRID), loud) == pytest.approx(
        ref, rel=0.01)
    # a spectrum recorded at half the temperature gives the same g0 when T_eff says so
    cold = cal.synthetic_tone_spectrum(MODE, g0, TONE, GRID, t_eff=150.0)
    assert _g0(cold, t_eff=150.0) == pytest.approx(ref, rel=0.01)
    # a wrong T_eff biases g0 by sqrt(T_true / T_assumed)
    assert _g0(cold) == pytest.approx(ref * math.sqrt(0.5), rel=0.01)


def test_g0_with_welch_scatter_and_floor():
    rng = np.random.default_rng(0)
    g0 = TWO_PI * 2000.0
    spec = cal.synthetic_tone_spectrum(MODE, g0, TONE, GRID, n_avg=500, rng=rng)
    assert _g0(spec) == pytest.approx(g0, rel=0.05)


def test_g0_for_unresolved_device_mode():
    mode = device_mode()
    grid = FrequencyGrid.spanning(0.0, 100e3, 0.5)
    tone = cal.CalibrationTone(300.0, TWO_PI * 50e3)
    spec = cal.synthetic_tone_spectrum(mode, DEVICE_G0, tone, grid, bin_average=True)
    assert cal.g0_from_tone(spec, tone, mode) == pytest.approx(DEVICE_G0, rel=0.03)


def test_tone_outside_spectrum_rejected():
    spec = cal.synthetic_tone_spectrum(MODE, 1e4, TONE, GRID)
    with pytest.raises(cal.CalibrationError):
        cal.g0_from_tone(spec, cal.CalibrationTone(1.0, TWO_PI * 1e6), MODE)


# --- photon number from the optical spring ---------------------------------------------

def test_spring_fit_noiseless_round_trip():
    mode, cav = device_mode(), device_cavity()
    nus = np.linspace(-2, 2, 21)
    shifts = cal.synthetic_spring_shifts(mode, cav, 2e6, nus)
    fit = cal.nc_from_spring_fit(shifts, mode, cav)
    assert fit.n_c == pytest.approx(2e6, rel=1e-4)
    assert fit.rms_residual < 1e-4 * max(abs(s) for _, s in shifts)


def test_spring_fit_zero_shifts_give_zero_photons():
    mode, cav = device_mode(), device_cavity()
    fit = cal.nc_from_spring_fit([(nu, 0.0) for nu in (-1, 0.5, 1)], mode, cav)
    assert fit.n_c == 0.0


def test_spring_fit_rejects_degenerate_input():
    mode, cav = device_mode(), device_cavity()
    with pytest.raises(cal.CalibrationError):
        cal.nc_from_spring_fit([(0.0, 1.0)] * 3, mode, cav)
    with pytest.raises(cal.CalibrationError):
        cal.nc_from_spring_fit([(1.0, 1.0)], mode, cav)


def test_spring_shape_extrema():
    # 4 nu / (1 + nu^2)^2 peaks at nu = 1/sqrt(3)
    nus = np.linspace(0, 3, 30001)
    assert nus[np.argmax(cal.spring_shape(nus, 1.0, 1.0))] == pytest.approx(1 / math.sqrt(3),
                                                                          abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(n_c=st.floats(1e3, 1e8), noise=st.floats(0, 0.05), seed=st.integers(0, 2 ** 16))
def test_spring_fit_is_linear_in_photon_number(n_c, noise, seed):
    mode, cav = device_mode(), device_cavity()
    nus = np.linspace(-1.5, 1.5, 15)
    rng = np.random.default_rng(seed)
    fit = cal.nc_from_spring_fit(cal.synthetic_spring_shifts(mode, cav, n_c, nus, noise, rng),
                                 mode, cav)
    assert fit.n_c == pytest.approx(n_c, rel=max(3 * noise, 1e-4))


# --- coupling efficiency ----------------------------------------------------------------

def test_eta_from_quoted_photons_per_watt():
    # 1.7e6 photons per mW at the quoted linewidth and wavelength implies eta ~ 0.44
    fit = cal.eta_from_power_sweep([0.0, 1e-3, 2e-3], [0.0, 1.7e6, 3.4e6], device_cavity())
    assert fit.eta == pytest.approx(0.44, abs=0.01)
    assert fit.slope == pytest.approx(1.7e9)


def test_eta_round_trip():
    cav = device_cavity(eta=0.4)
    slope = photon_number_from_power(1.0, cav)
    p = np.linspace(1e-4, 1e-2, 6)
    assert cal.eta_from_power_sweep(p, cal.synthetic_power_sweep(slope, p),
                                    cav).eta == pytest.approx(0.4, rel=1e-9)
    with pytest.raises(cal.CalibrationError):
        cal.eta_from_power_sweep([1e-3], [1.0], cav)


# --- thermal peak fits ------------------------------------------------------------------

def test_single_clean_lorentzian_area():
    mode = MechanicalMode.from_hz(1e-12, 1000.0, 500.0, 0.0)
    grid = FrequencyGrid.spanning(0.0, 3000.0, 0.1)
    spec = cal.synthetic_thermal_spectrum([mode], grid)
    (fit,) = cal.fit_thermal_peaks(spec, [cal.PeakGuess(1000.0, 400.0, 2e-12)])
    assert fit.area == pytest.approx(K_B * 298 / (mode.mass * mode.omega_m ** 2), rel=0.01)
    assert fit.f_m == pytest.approx(1000.0, rel=1e-4)
    assert fit.q_factor == pytest.approx(500.0, rel=0.02)
    assert fit.mass_eff == pytest.approx(1e-12, rel=0.01)


def test_fit_separates_satellite_mode():
    probe = MechanicalMode.from_hz(1e-12, 1000.0, 1e3, 0.0)
    chip = MechanicalMode.from_hz(2e-8, 1300.0, 1e3, 0.0)
    grid = FrequencyGrid.spanning(0.0, 3000.0, 0.05)
    rng = np.random.default_rng(4)
    spec = cal.synthetic_thermal_spectrum([probe, chip], grid, floor=1e-30, n_avg=200, rng=rng)
    guesses = [cal.PeakGuess(1000.0, 800.0, 2e-12), cal.PeakGuess(1300.0, 800.0, 1e-8)]
    fits = cal.fit_thermal_peaks(spec, guesses)
    assert [f.f_m for f in fits] == pytest.approx([1000.0, 1300.0], rel=1e-4)
    assert fits[0].mass_eff == pytest.approx(1e-12, rel=0.1)
    assert fits[1].mass_eff == pytest.approx(2e-8, rel=0.1)
    assert fits[1].q_factor == pytest.approx(1e3, rel=0.15)
    assert fits[0].as_mode().f_m == pytest.approx(fits[0].f_m)


def test_peak_fit_rejects_wrong_units():
    grid = FrequencyGrid.spanning(0.0, 10.0, 1.0)
    spec = cal.synthetic_thermal_spectrum([MODE], grid)
    with pytest.raises(SpectrumError):
        cal.fit_thermal_peaks(Psd(grid, spec.values, Units.PER_HZ),
                              [cal.PeakGuess(5.0, 10.0, 1e-12)])
    with pytest.raises(cal.CalibrationError):
        cal.fit_thermal_peaks(spec, [])


# --- budgets ----------------------------------------------------------------------------

def _desk(n_cav=1e12, g=1e12, nu=0.0, temperature=298.0):
    modes = [MechanicalMode.from_hz(1e-12, f, 1e3, g, temperature) for f in (410.0, 1830.0)]
    return SystemParams(modes, CavityParams(TWO_PI * 1e6, nu, n_cav))


def test_budget_totals_are_component_sums():
    grid = FrequencyGrid.spanning(0.0, 5000.0, 1.0)
    rep = cal.model_budgets(_desk(), grid, bands=((100, 4000),))
    for budget in (rep.s_y, rep.s_rin):
        np.testing.assert_allclose(budget.total.values,
                                   sum(c.values for c in budget.components.values()))
    assert set(rep.s_rin.components) >= {"shot", "tin"}
    assert set(rep.s_y.components) >= {"imp", "thermal", "thermal_other", "qba", "tinba"}


def test_budget_without_coupling_is_shot_noise_only():
    grid = FrequencyGrid.spanning(0.0, 5000.0, 1.0)
    rep = cal.model_budgets(_desk(g=0.0), grid)
    assert list(rep.s_rin.components) == ["shot"]
    # white at 8 / (n_c kappa) up to the cavity roll-off, negligible at kHz
    np.testing.assert_allclose(rep.s_rin.total.values, 8 / (1e12 * TWO_PI * 1e6), rtol=1e-3)
    assert rep.s_rin.total.values[0] == pytest.approx(8 / (1e12 * TWO_PI * 1e6))


def test_resonant_budget_has_no_linear_thermal_rin():
    grid = FrequencyGrid.spanning(0.0, 5000.0, 1.0)
    rep = cal.model_budgets(_desk(), grid, bands=((100, 4000),))
    assert "thermal" not in rep.s_rin.components
    assert rep.tin_dominated((100, 4000))
    detuned = cal.model_budgets(_desk(nu=0.5, n_cav=1e6), grid, bands=((100, 4000),))
    assert "thermal" in detuned.s_rin.components


def test_measured_tin_level_rescales_with_temperature():
    grid = FrequencyGrid.spanning(0.0, 5000.0, 1.0)
    warm = cal.model_budgets(_desk(), grid, s_rin_tin=1e-11, tin_reference_temperature=298.0)
    cold = cal.model_budgets(_desk(temperature=4.0), grid, s_rin_tin=1e-11,
                             tin_reference_temperature=298.0)
    assert warm.s_rin["tin"].values[10] == pytest.approx(1e-11)
    assert cold.s_rin["tin"].values[10] == pytest.approx(1e-11 * (4 / 298) ** 2)


def test_approximate_y_keeps_listed_components():
    grid = FrequencyGrid.spanning(0.0, 5000.0, 1.0)
    rep = cal.model_budgets(_desk(), grid, approximate_y=True)
    assert set(rep.s_y.components) <= set(cal.APPROX_Y_COMPONENTS)
    assert rep.approximate_y


def test_imprecision_component_level():
    grid = FrequencyGrid.spanning(0.0, 5000.0, 1.0)
    sys_ = _desk()
    rep = cal.model_budgets(sys_, grid, imprecision_scale=10.0)
    g = sys_.probe.coupling_G
    assert rep.s_y["imp"].values[0] == pytest.approx(10 * TWO_PI * 1e6 / (8 * g * g * 1e12))


def test_unstable_operating_point_rejected():
    with pytest.raises(cal.CalibrationError):
        cal.model_budgets(SystemParams([device_mode()], device_cavity(detuning_nu=0.5, n_cav=1e7)),
                          FrequencyGrid.spanning(0.0, 1e5, 10.0))


def test_missing_tin_is_never_dominant():
    grid = FrequencyGrid.spanning(0.0, 5000.0, 1.0)
    rep = cal.model_budgets(_desk(g=0.0), grid, bands=((100, 200),))
    assert rep.tin_over_thermal_db[(100, 200)] == -np.inf
    assert not rep.tin_dominated((100, 200))


# --- shot / TIN split from a power series -----------------------------------------------

def test_power_split_exact():
    p = np.logspace(-6, -2, 9)
    fit = cal.fit_power_split(p, cal.synthetic_power_series(3e-15, 1e-11, p))
    assert fit.a == pytest.approx(3e-15, rel=1e-9)
    assert fit.b == pytest.approx(1e-11, rel=1e-9)
    np.testing.assert_allclose(fit(p), 3e-15 / p + 1e-11)


def test_power_split_with_noise():
    p = np.logspace(-6, -2, 20)
    rng = np.random.default_rng(1)
    fit = cal.fit_power_split(p, cal.synthetic_power_series(3e-15, 1e-11, p, 0.05, rng))
    assert fit.a == pytest.approx(3e-15, rel=0.1)
    assert fit.b == pytest.approx(1e-11, rel=0.1)
    with pytest.raises(cal.CalibrationError):
        cal.fit_power_split([1.0], [1.0])
