"""Dispersive-fiber spectrometer for broadband photon pairs.

Simulate timestamp data through a long spool, self-calibrate the spool's
dispersion from filter edges, and invert coincidence histograms into joint
spectra and tuning curves.
"""
from .calibrate import CalibrationPoint, FitResult, dispersion_from_fit, fit, predict_width
from .dispersion import (REFERENCE_SPOOL, DispersionModel, TimeAxis, WavelengthBand, d_param,
                         group_delay, time_width, wavelength_at)
from .errors import (FiberSpecError, FormatError, NumericalError, ValidationError)
from .events import EventStream, read_events, write_events
from .histogram import Histogram1D, Histogram2D, accumulate, detect_edges, marginal
from .instrument import DetectorChain, FilterPair, TopHatFilter, standard_filter_pair
from .invert import RunAnchor, TuningCurve, correct_spectrum, invert_histogram, stitch
from .simulate import RunConfig, sample_pairs
from .spdc import (PumpSetting, SourceModel, SpectralBrightnessGrid, conjugate_band, jsi,
                   resolution_floor)

__version__ = "0.1.0"
