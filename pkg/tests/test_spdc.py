import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad

from fiberspec.dispersion import WavelengthBand
from fiberspec.errors import ValidationError
from fiberspec.instrument import DetectorChain
from fiberspec.spdc import (PumpSetting, SourceModel, SpectralBrightnessGrid, band_mean_pairs,
                            conjugate_band, conjugate_wavelength, jsi, resolution_floor)

SRC = SourceModel()
C_BAND = WavelengthBand(1498.0, 1540.0)
L_BAND = WavelengthBand(1567.6, 1612.6)


def pump(det=0.0, power=1.0):
    return PumpSetting.from_detuning(det, SRC, power)


def test_peak_on_ridge_at_phase_matching():
    p = pump()
    ls = np.linspace(1500, 1600, 201)
    on = jsi(ls, conjugate_wavelength(ls, p.lambda_p), p, SRC)
    # degenerate point sits at the envelope centre too
    lam_d = 2 * SRC.lambda_p0
    peak = jsi(lam_d, lam_d, p, SRC)
    assert peak >= on.max() * (1 - 1e-12)
    for dl in (0.05, -0.05, 0.2):
        assert jsi(lam_d, lam_d + dl, p, SRC) < peak


def test_off_ridge_gaussian_tail():
    p = pump()
    lam = 2 * SRC.lambda_p0
    peak = jsi(lam, lam, p, SRC)
    # 10 pump linewidths off the ridge in effective pump wavelength
    pe = p.lambda_p + 10 * SRC.pump_linewidth
    li = 1.0 / (1.0 / pe - 1.0 / lam)
    assert jsi(lam, li, p, SRC) < 1e-3 * peak


def test_exchange_symmetry_at_zero_detuning():
    p = pump()
    ls = np.array([1500.0, 1530.0, 1548.0])
    li = conjugate_wavelength(ls, p.lambda_p) + 0.01
    assert np.allclose(jsi(ls, li, p, SRC), jsi(li, ls, p, SRC), rtol=1e-12)


def test_nonnegative_and_positive_wavelengths():
    p = pump(0.25)
    ls, li = np.meshgrid(np.linspace(1400, 1700, 50), np.linspace(1400, 1700, 50))
    assert np.all(jsi(ls, li, p, SRC) >= 0)
    with pytest.raises(ValidationError):
        jsi(-1.0, 1550.0, p, SRC)


def test_full_plane_normalisation():
    p = pump(0.0, power=2.0)
    whole = WavelengthBand(1100.0, 2400.0)
    assert band_mean_pairs(whole, whole, p, SRC) == pytest.approx(SRC.mu_hat * 2.0, rel=2e-3)


def test_delta_band_mean_against_direct_quadrature():
    """Filtered mean over the degenerate band versus an independent 2-D quadrature."""
    p = pump(0.0)
    band = WavelengthBand(1528.0, 1563.0)
    got = band_mean_pairs(band, band, p, SRC)
    # integrate in (lam_s, lam_i) directly; the idler range is a thin strip around the ridge
    win = 8 * SRC.pump_sigma

    def strip(ls):
        a = conjugate_wavelength(ls, p.lambda_p + win)
        b = conjugate_wavelength(ls, p.lambda_p - win)
        return max(band.lo, min(a, b)), min(band.hi, max(a, b))

    ref, _ = dblquad(lambda li, ls: float(jsi(ls, li, p, SRC)), band.lo, band.hi,
                     lambda ls: strip(ls)[0], lambda ls: max(strip(ls)), epsrel=1e-7)
    assert got == pytest.approx(ref, rel=1e-3)
    assert got <= 0.01


@pytest.mark.parametrize("lp,expected", [(774.7, 1531.61775759868836),
                                         (774.9, 1532.39969723729027),
                                         (775.1, 1533.18203154574132)])
def test_conjugate_band_upper_edge(lp, expected):
    b = conjugate_band(C_BAND, L_BAND, PumpSetting.from_wavelength(lp, SRC))
    assert b.lo == 1498.0
    assert b.hi == pytest.approx(expected, abs=1e-9)


def test_conjugate_band_fixed_point():
    p = pump(0.1)
    a = WavelengthBand(1510.0, 1530.0)
    image = WavelengthBand(conjugate_wavelength(a.hi, p.lambda_p),
                           conjugate_wavelength(a.lo, p.lambda_p))
    b = conjugate_band(a, image, p)
    assert b.lo == pytest.approx(a.lo, abs=1e-9) and b.hi == pytest.approx(a.hi, abs=1e-9)


def test_conjugate_band_empty():
    assert conjugate_band(WavelengthBand(1460, 1480), WavelengthBand(1567.6, 1612.6),
                          pump(0.0)) is None


def test_conjugate_band_antitone_over_pump():
    his = [conjugate_band(C_BAND, L_BAND, PumpSetting.from_wavelength(lp, SRC)).hi
           for lp in (774.7, 774.9, 775.1)]
    assert his[0] < his[1] < his[2]


def test_conjugate_band_pump_above_band_rejected():
    with pytest.raises(ValidationError):
        conjugate_band(WavelengthBand(700, 760), L_BAND, pump(0.0))


def test_resolution_floor_examples():
    assert resolution_floor(DetectorChain()) == pytest.approx(180.0, abs=0.5)
    assert resolution_floor(sigma_sync=0, sigma_pulse=0, sigma_det=0) == 0.0
    assert resolution_floor(sigma_sync=0, sigma_pulse=170, sigma_det=0) == 170.0


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 500), b=st.floats(0, 500), c=st.floats(0, 500), d=st.floats(0, 100))
def test_resolution_floor_monotone(a, b, c, d):
    base = resolution_floor(sigma_sync=a, sigma_pulse=b, sigma_det=c)
    assert resolution_floor(sigma_sync=a + d, sigma_pulse=b, sigma_det=c) >= base
    assert resolution_floor(sigma_sync=a, sigma_pulse=b + d, sigma_det=c) >= base
    assert resolution_floor(sigma_sync=a, sigma_pulse=b, sigma_det=c + d) >= base


def test_source_invariants():
    with pytest.raises(ValidationError):
        SourceModel(pump_linewidth=0.5)
    with pytest.raises(ValidationError):
        SourceModel(mu_hat=-1)
    with pytest.raises(ValidationError):
        PumpSetting(774.7, 0.1).check(SRC)


def test_grid_validation():
    with pytest.raises(ValidationError):
        SpectralBrightnessGrid(np.array([2.0, 1.0]), np.array([1.0]), np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        SpectralBrightnessGrid(np.array([1.0]), np.array([1.0]), -np.ones((1, 1)))
