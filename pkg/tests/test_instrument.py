import math

import numpy as np
import pytest

from fiberspec.dispersion import WavelengthBand
from fiberspec.errors import ValidationError
from fiberspec.instrument import (DetectorChain, TopHatFilter, edge_scale_from_slope,
                                  standard_filter_pair)


def test_filter_half_power_at_nominal_edges():
    f = TopHatFilter(WavelengthBand(1500.0, 1540.0))
    assert f.transmission(1500.0) == pytest.approx(0.5, rel=1e-3)
    assert f.transmission(1540.0) == pytest.approx(0.5, rel=1e-3)
    assert f.transmission(1520.0) == 1.0


def test_filter_slope_and_floor():
    f = TopHatFilter(WavelengthBand(1500.0, 1540.0), edge_scale_from_slope(30.0))
    assert f.slope == pytest.approx(30.0)
    t = f.transmission(1540.5)
    assert -10 * math.log10(t) == pytest.approx(10 * math.log10(2) + 15.0, rel=1e-9)
    sup = f.support()
    assert f.transmission(sup.hi + 1e-6) == 0.0


def test_ideal_step_filter():
    f = TopHatFilter(WavelengthBand(1500.0, 1540.0), 0.0)
    assert f.slope == math.inf
    assert list(f.transmission(np.array([1499.99, 1500.0, 1540.0, 1540.01]))) == [0, 1, 1, 0]


def test_insertion_loss():
    f = TopHatFilter(WavelengthBand(1500.0, 1540.0), 0.0, insertion_loss=3.0)
    assert f.transmission(1520.0) == pytest.approx(10 ** -0.3)


def test_standard_sets_and_overlap():
    assert standard_filter_pair("delta").overlapping
    assert not standard_filter_pair("beta").overlapping
    with pytest.raises(ValidationError):
        standard_filter_pair("epsilon")


def test_detector_chain_validation():
    with pytest.raises(ValidationError):
        DetectorChain(efficiency=1.5)
    with pytest.raises(ValidationError):
        DetectorChain(sigma_det=-1.0)
