"""Detector chains and top-hat filter sets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dispersion import WavelengthBand
from .errors import ValidationError

#: dB drop between the 90 % and 10 % transmission points
_DB_10_90 = 10.0 * math.log10(9.0)
#: attenuation at the nominal band edge (half power)
_DB_HALF = 10.0 * math.log10(2.0)
#: the ramp is followed down to this attenuation, beyond it T = 0
_DB_FLOOR = 40.0

DEFAULT_EDGE_SLOPE_DB_PER_NM = 30.0


@dataclass(frozen=True)
class DetectorChain:
    """Timing jitters (ps, 1-sigma), efficiency, dead time (ps), dark rate (1/s)."""

    sigma_sync: float = 30.0
    sigma_pulse: float = 170.0
    sigma_det: float = 51.0
    efficiency: float = 0.1
    dead_time: float = 1.0e7
    dark_rate: float = 1000.0

    def __post_init__(self):
        for name in ("sigma_sync", "sigma_pulse", "sigma_det"):
            if getattr(self, name) < 0:
                raise ValidationError(f"chain.{name} must be >= 0")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValidationError(f"chain.efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dead_time < 0:
            raise ValidationError("chain.dead_time must be >= 0")
        if self.dark_rate < 0:
            raise ValidationError("chain.dark_rate must be >= 0")

    def to_config(self) -> dict:
        return {
            "sigma_sync_ps": self.sigma_sync,
            "sigma_pulse_ps": self.sigma_pulse,
            "sigma_det_ps": self.sigma_det,
            "efficiency": self.efficiency,
            "dead_time_ps": self.dead_time,
            "dark_rate_hz": self.dark_rate,
        }

    @classmethod
    def from_config(cls, d: dict) -> "DetectorChain":
        return cls(
            sigma_sync=float(d["sigma_sync_ps"]),
            sigma_pulse=float(d["sigma_pulse_ps"]),
            sigma_det=float(d["sigma_det_ps"]),
            efficiency=float(d["efficiency"]),
            dead_time=float(d["dead_time_ps"]),
            dark_rate=float(d["dark_rate_hz"]),
        )


def edge_scale_from_slope(slope_db_per_nm: float) -> float:
    return _DB_10_90 / slope_db_per_nm


DEFAULT_EDGE_SCALE = edge_scale_from_slope(DEFAULT_EDGE_SLOPE_DB_PER_NM)


@dataclass(frozen=True)
class TopHatFilter:
    """Pass band with linear-in-dB edges.

    The nominal band edges are the half-power points. ``edge_scale`` is the
    10-90 % transition width in nm; zero gives an ideal step.
    """

    band: WavelengthBand
    edge_scale: float = DEFAULT_EDGE_SCALE
    insertion_loss: float = 0.0  # dB

    def __post_init__(self):
        if self.edge_scale < 0:
            raise ValidationError("filter edge_scale must be >= 0")
        if self.insertion_loss < 0:
            raise ValidationError("filter insertion_loss must be >= 0 dB")

    @property
    def slope(self) -> float:
        """Edge slope in dB/nm (inf for an ideal step)."""
        return math.inf if self.edge_scale == 0 else _DB_10_90 / self.edge_scale

    def support(self) -> WavelengthBand:
        """Wavelength range outside of which the transmission is taken as zero."""
        if self.edge_scale == 0:
            return self.band
        reach = (_DB_FLOOR - _DB_HALF) / self.slope
        return WavelengthBand(self.band.lo - reach, self.band.hi + reach)

    def transmission(self, lam):
        lam = np.asarray(lam, dtype=float)
        outside = np.maximum(self.band.lo - lam, lam - self.band.hi)
        if self.edge_scale == 0:
            atten = np.where(outside <= 0, 0.0, np.inf)
        else:
            atten = np.clip(_DB_HALF + self.slope * outside, 0.0, None)
            atten = np.where(atten > _DB_FLOOR, np.inf, atten)
        return 10.0 ** (-(atten + self.insertion_loss) / 10.0)


@dataclass(frozen=True)
class FilterPair:
    signal: TopHatFilter
    idler: TopHatFilter
    label: str = "custom"

    @property
    def overlapping(self) -> bool:
        return self.signal.band.intersect(self.idler.band) is not None


# filter sets alpha-delta; the C/L-band idler edges use the more precise 1567.6-1612.6 nm
FILTER_BANDS = {
    "alpha": ((1482.0, 1498.0), (1602.0, 1618.0)),
    "beta": ((1498.0, 1540.0), (1567.6, 1612.6)),
    "gamma": ((1522.0, 1538.0), (1562.0, 1578.0)),
    "delta": ((1528.0, 1563.0), (1528.0, 1563.0)),
}


def standard_filter_pair(label: str, edge_scale: float = DEFAULT_EDGE_SCALE,
                         insertion_loss: float = 0.0) -> FilterPair:
    try:
        (slo, shi), (ilo, ihi) = FILTER_BANDS[label]
    except KeyError:
        raise ValidationError(
            f"unknown filter set {label!r}; choose from {sorted(FILTER_BANDS)}") from None
    return FilterPair(
        signal=TopHatFilter(WavelengthBand(slo, shi), edge_scale, insertion_loss),
        idler=TopHatFilter(WavelengthBand(ilo, ihi), edge_scale, insertion_loss),
        label=label,
    )
