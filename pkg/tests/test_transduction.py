import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinsim.constants import TWO_PI
from tinsim.params import CavityParams, MechanicalMode, SystemParams, device_cavity, device_mode
from tinsim.spectra import FrequencyGrid, Psd, SpectrumError, Units
from tinsim.transduction import (
    MAGIC_NU,
    expansion_at,
    fit_swept_transmission,
    linear_rin,
    lorentzian,
    shot_rin,
    swept_transmission,
    thermal_sweep_depth,
    tin_prefactor,
    tin_rin,
)


@settings(max_examples=60, deadline=None)
@given(nu=st.floats(-4, 4))
def test_expansion_matches_finite_differences(nu):
    h = 1e-4
    f0 = lorentzian(nu)
    d1 = (lorentzian(nu + h) - lorentzian(nu - h)) / (2 * h) / f0
    d2 = (lorentzian(nu + h) - 2 * f0 + lorentzian(nu - h)) / h ** 2 / 2 / f0
    e = expansion_at(nu)
    assert e.c0 == 1.0
    assert e.c1 == pytest.approx(d1, rel=1e-6, abs=1e-8)
    assert e.c2 == pytest.approx(d2, rel=1e-5, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(nu=st.floats(-10, 10))
def test_tin_prefactor_properties(nu):
    p = tin_prefactor(nu)
    assert 0 <= p <= 1
    assert p == pytest.approx(tin_prefactor(-nu))
    assert p == pytest.approx(expansion_at(nu).c2 ** 2)


def test_tin_prefactor_resonant_maximum_and_magic_null():
    assert tin_prefactor(0.0) == 1.0
    assert tin_prefactor(MAGIC_NU) == 0.0
    assert tin_prefactor(-MAGIC_NU) == 0.0
    nus = np.linspace(-3, 3, 601)
    assert nus[np.argmax(tin_prefactor(nus))] == 0.0


def test_magic_null_depth_scales_with_detuning_error():
    # residual prefactor near the magic point grows quadratically with the offset
    d = np.array([1e-3, 2e-3, 4e-3])
    p = tin_prefactor(MAGIC_NU + d)
    np.testing.assert_allclose(p[1:] / p[:-1], 4.0, rtol=0.02)


def test_shot_rin_level():
    cav = device_cavity(n_cav=1e6)
    grid = FrequencyGrid(0.0, 1e3, 100)
    rin = shot_rin(cav, grid)
    assert rin.values[0] == pytest.approx(8 / (1e6 * cav.kappa))
    with pytest.raises(SpectrumError):
        shot_rin(device_cavity(), grid)


def test_tin_rin_units_and_scaling():
    grid = FrequencyGrid(0.0, 1.0, 4)
    s2 = Psd(grid, np.ones(4), Units.PER_HZ)
    np.testing.assert_allclose(tin_rin(s2, 1.0).values, tin_prefactor(1.0))
    with pytest.raises(SpectrumError):
        tin_rin(Psd(grid, np.ones(4), Units.M2_PER_HZ), 0.0)


def test_linear_rin_vanishes_on_resonance():
    grid = FrequencyGrid(0.0, 1.0, 4)
    s = Psd(grid, np.ones(4), Units.PER_HZ)
    assert np.all(linear_rin(s, 0.0).values == 0)
    np.testing.assert_allclose(linear_rin(s, 1.0).values, 1.0)  # c1 = -2/2


def test_swept_transmission_fit_round_trip():
    mode = MechanicalMode.from_hz(1e-12, 1000.0, 1e3, 1e12)
    system = SystemParams([mode], CavityParams(TWO_PI * 1e6))
    nu = np.linspace(-3, 3, 4000)
    rate = 20.0  # nu per second
    p = swept_transmission(system, rate, 0.0, nu, depth=0.2, phase=1.0)
    fit = fit_swept_transmission(nu, p, mode.omega_m, rate, depth_guess=0.1)
    assert fit.depth == pytest.approx(0.2, rel=1e-4)
    assert fit.phase == pytest.approx(1.0, abs=1e-4)
    assert fit.gx_over_kappa == pytest.approx(0.025, rel=1e-4)


def test_thermal_sweep_depth_formula():
    mode, cav = device_mode(), device_cavity()
    system = SystemParams([mode], cav)
    x_th = math.sqrt(1.380649e-23 * 298 / (mode.mass * mode.omega_m ** 2))
    assert thermal_sweep_depth(system) == pytest.approx(8 * mode.coupling_G * x_th / cav.kappa,
                                                        rel=1e-6)


def test_swept_transmission_rejects_zero_rate():
    system = SystemParams([device_mode()], device_cavity())
    with pytest.raises(ValueError):
        swept_transmission(system, 0.0, 1e-11, np.zeros(3))
