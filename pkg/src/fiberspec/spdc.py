"""Joint spectral intensity of the poled-fiber pair source.

The source is described by a phase-matching proxy: every (lam_s, lam_i)
defines an effective pump wavelength through energy conservation,

    1/lam_pe = 1/lam_s + 1/lam_i,

and the pair density is

    jsi = mu_hat * P / Z * env(h) * sinc^2(a * (lam_pe - lam_p0 - c2 * h^2))
          * g(lam_pe - lam_p)

with ``g`` a unit-area Gaussian of FWHM ``pump_linewidth``, ``a`` chosen so the
sinc^2 FWHM equals ``pump_acceptance_fwhm``, ``h`` the signal/idler frequency
half-separation expressed in nm at ``signal_idler_center`` and ``env`` a broad
Gaussian spectral envelope. ``Z`` normalises the full-plane integral at the
phase-matching peak to mu_hat * P pairs per pulse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .dispersion import WavelengthBand
from .errors import ValidationError
from .instrument import DetectorChain

_SINC2_HALF = brentq(lambda x: math.sin(x) / x - math.sqrt(0.5), 1.0, 2.0, xtol=1e-15)
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
#: half-width of the pump-linewidth window, in Gaussian sigmas
PUMP_WINDOW_SIGMAS = 7.0


@dataclass(frozen=True)
class SourceModel:
    lambda_p0: float = 774.5
    pump_acceptance_fwhm: float = 0.35
    pump_linewidth: float = 0.02
    mu_hat: float = 0.05  # pairs per pulse per mW over the full spectrum
    signal_idler_center: float = 1549.0
    bandwidth_fwhm: float = 160.0  # nm, envelope along the ridge
    tuning_curvature: float = 0.0  # nm of pump detuning per nm^2 of half-separation

    def __post_init__(self):
        if self.lambda_p0 <= 0 or self.signal_idler_center <= 0:
            raise ValidationError("source wavelengths must be positive")
        if self.pump_linewidth <= 0 or self.pump_acceptance_fwhm <= 0:
            raise ValidationError("source widths must be positive")
        if self.pump_linewidth >= self.pump_acceptance_fwhm:
            raise ValidationError(
                "pump_linewidth must be narrower than the pump acceptance bandwidth")
        if self.mu_hat < 0:
            raise ValidationError("source.mu_hat must be >= 0")
        if self.bandwidth_fwhm <= 0:
            raise ValidationError("source.bandwidth_fwhm must be positive")

    @property
    def sinc_scale(self) -> float:
        return 2.0 * _SINC2_HALF / self.pump_acceptance_fwhm

    @property
    def pump_sigma(self) -> float:
        return self.pump_linewidth * _FWHM_TO_SIGMA

    def to_config(self) -> dict:
        return {
            "lambda_p0_nm": self.lambda_p0,
            "pump_acceptance_fwhm_nm": self.pump_acceptance_fwhm,
            "pump_linewidth_nm": self.pump_linewidth,
            "mu_hat_pairs_per_mw": self.mu_hat,
            "signal_idler_center_nm": self.signal_idler_center,
            "bandwidth_fwhm_nm": self.bandwidth_fwhm,
            "tuning_curvature_per_nm": self.tuning_curvature,
        }

    @classmethod
    def from_config(cls, d: dict) -> "SourceModel":
        return cls(
            lambda_p0=float(d["lambda_p0_nm"]),
            pump_acceptance_fwhm=float(d["pump_acceptance_fwhm_nm"]),
            pump_linewidth=float(d["pump_linewidth_nm"]),
            mu_hat=float(d["mu_hat_pairs_per_mw"]),
            signal_idler_center=float(d["signal_idler_center_nm"]),
            bandwidth_fwhm=float(d["bandwidth_fwhm_nm"]),
            tuning_curvature=float(d["tuning_curvature_per_nm"]),
        )


@dataclass(frozen=True)
class PumpSetting:
    lambda_p: float
    detuning: float
    power: float = 1.0  # mW

    def __post_init__(self):
        if self.lambda_p <= 0:
            raise ValidationError("pump.lambda_p must be positive")
        if self.lambda_p - self.detuning <= 0:
            raise ValidationError("pump detuning is inconsistent with lambda_p")
        if self.power < 0:
            raise ValidationError("pump.power must be >= 0")

    @classmethod
    def from_detuning(cls, detuning: float, src: SourceModel, power: float = 1.0):
        return cls(lambda_p=src.lambda_p0 + detuning, detuning=detuning, power=power)

    @classmethod
    def from_wavelength(cls, lambda_p: float, src: SourceModel, power: float = 1.0):
        return cls(lambda_p=lambda_p, detuning=lambda_p - src.lambda_p0, power=power)

    def check(self, src: SourceModel) -> None:
        if abs(self.lambda_p - src.lambda_p0 - self.detuning) > 1e-9:
            raise ValidationError(
                f"pump detuning {self.detuning} != lambda_p - lambda_p0 "
                f"({self.lambda_p} - {src.lambda_p0})")

    def to_config(self) -> dict:
        return {"detuning_nm": self.detuning, "power_mw": self.power}


@dataclass
class SpectralBrightnessGrid:
    """Pair density on a (possibly nonuniform) signal x idler wavelength grid.

    ``values[i, j]`` belongs to ``lambda_s_axis[i]`` and ``lambda_i_axis[j]``.
    Edges, when present, delimit the cells the values are averaged over.
    """

    lambda_s_axis: np.ndarray
    lambda_i_axis: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    lambda_s_edges: np.ndarray | None = None
    lambda_i_edges: np.ndarray | None = None
    variance: np.ndarray | None = None

    def __post_init__(self):
        self.lambda_s_axis = np.asarray(self.lambda_s_axis, dtype=float)
        self.lambda_i_axis = np.asarray(self.lambda_i_axis, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.lambda_s_axis.size, self.lambda_i_axis.size):
            raise ValidationError("grid values do not match the axis lengths")
        for ax in (self.lambda_s_axis, self.lambda_i_axis):
            if ax.size > 1 and np.any(np.diff(ax) <= 0):
                raise ValidationError("grid axes must be strictly increasing")
        if np.any(self.values < 0):
            raise ValidationError("spectral brightness must be nonnegative")
        self.metadata.setdefault("normalization", "raw")

    @property
    def normalization(self) -> str:
        return self.metadata["normalization"]

    def cell_widths(self):
        return np.diff(self.lambda_s_edges), np.diff(self.lambda_i_edges)

    def total(self) -> float:
        """Integral over both axes (pairs per pulse for a corrected grid)."""
        ws, wi = self.cell_widths()
        return float(np.sum(self.values * ws[:, None] * wi[None, :]))

    def with_values(self, values, variance=None, **meta) -> "SpectralBrightnessGrid":
        md = dict(self.metadata)
        md.update(meta)
        return replace(self, values=values, variance=variance, metadata=md)


def conjugate_wavelength(lam, lambda_p):
    """Partner wavelength under 1/lambda_p = 1/lam + 1/partner."""
    lam = np.asarray(lam, dtype=float)
    return 1.0 / (1.0 / lambda_p - 1.0 / lam)


def effective_pump(lambda_s, lambda_i):
    return 1.0 / (1.0 / np.asarray(lambda_s, dtype=float) + 1.0 / np.asarray(lambda_i, dtype=float))


def half_separation(lambda_s, lambda_i, src: SourceModel):
    """Signal/idler frequency half-separation expressed in nm at the centre wavelength."""
    c = src.signal_idler_center
    return 0.5 * c * c * (1.0 / np.asarray(lambda_s, dtype=float) - 1.0 / np.asarray(lambda_i, dtype=float))


def _shape(lambda_s, lambda_i, lambda_p, src: SourceModel):
    """Unnormalised density with a unit-area pump Gaussian."""
    pe = effective_pump(lambda_s, lambda_i)
    h = half_separation(lambda_s, lambda_i, src)
    env = np.exp(-4.0 * math.log(2.0) * (h / src.bandwidth_fwhm) ** 2)
    x = src.sinc_scale * (pe - src.lambda_p0 - src.tuning_curvature * h * h)
    pm = np.sinc(x / np.pi) ** 2
    sig = src.pump_sigma
    gp = np.exp(-0.5 * ((pe - lambda_p) / sig) ** 2) / (sig * math.sqrt(2.0 * math.pi))
    return env * pm * gp


def _gauss_legendre_panels(lo, hi, panel, order):
    n = max(1, int(math.ceil((hi - lo) / panel)))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _ridge_integral(src: SourceModel, lambda_p: float, s_band, i_band,
                    panel=0.25, order=8, pe_order=48):
    """Integrate the unnormalised shape over s_band x i_band in ridge coordinates.

    Uses (lam_s, lam_pe) with the Jacobian d lam_i / d lam_pe = (lam_i/lam_pe)^2;
    the idler limits become lam_s-dependent limits on lam_pe.
    """
    s_lo, s_hi = s_band
    s_nodes, s_w = _gauss_legendre_panels(s_lo, s_hi, panel, order)
    win = PUMP_WINDOW_SIGMAS * src.pump_sigma
    pe_lo = np.full_like(s_nodes, lambda_p - win)
    pe_hi = np.full_like(s_nodes, lambda_p + win)
    if i_band is not None:
        pe_lo = np.maximum(pe_lo, effective_pump(s_nodes, i_band[0]))
        pe_hi = np.minimum(pe_hi, effective_pump(s_nodes, i_band[1]))
    # lam_pe must stay below lam_s for a positive idler wavelength
    pe_hi = np.minimum(pe_hi, s_nodes * (1.0 - 1e-12))
    ok = pe_hi > pe_lo
    x, w = np.polynomial.legendre.leggauss(pe_order)
    half = 0.5 * (pe_hi - pe_lo)
    mid = 0.5 * (pe_hi + pe_lo)
    pe = mid[:, None] + half[:, None] * x[None, :]
    lam_s = s_nodes[:, None]
    lam_i = 1.0 / (1.0 / pe - 1.0 / lam_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = _shape(lam_s, lam_i, lambda_p, src) * (lam_i / pe) ** 2
    f = np.where(ok[:, None], f, 0.0)
    inner = np.sum(f * w[None, :], axis=1) * half
    return float(np.sum(inner * s_w))


@lru_cache(maxsize=64)
def _norm_constant(src: SourceModel) -> float:
    c, f = src.signal_idler_center, src.bandwidth_fwhm
    lo = max(src.lambda_p0 * 1.05, c - 4.0 * f)
    hi = c + 6.0 * f
    return _ridge_integral(src, src.lambda_p0, (lo, hi), None, panel=1.0)


def jsi(lambda_s, lambda_i, pump: PumpSetting, src: SourceModel):
    """Pair density in pairs/nm^2 per pulse."""
    pump.check(src)
    if np.any(np.asarray(lambda_s) <= 0) or np.any(np.asarray(lambda_i) <= 0):
        raise ValidationError("wavelengths must be positive")
    scale = src.mu_hat * pump.power / _norm_constant(src)
    return scale * _shape(lambda_s, lambda_i, pump.lambda_p, src)


def band_mean_pairs(signal_band: WavelengthBand, idler_band: WavelengthBand,
                    pump: PumpSetting, src: SourceModel) -> float:
    """Mean pairs per pulse with lam_s in ``signal_band`` and lam_i in ``idler_band``."""
    pump.check(src)
    scale = src.mu_hat * pump.power / _norm_constant(src)
    panel = min(0.25, max(signal_band.width, 1e-6) / 4.0)
    return scale * _ridge_integral(src, pump.lambda_p, (signal_band.lo, signal_band.hi),
                                   (idler_band.lo, idler_band.hi), panel=panel)


def ridge_density(lambda_s, lambda_pe, pump: PumpSetting, src: SourceModel):
    """Density in (lam_s, lam_pe) coordinates, i.e. jsi times d lam_i/d lam_pe."""
    lambda_s = np.asarray(lambda_s, dtype=float)
    lambda_pe = np.asarray(lambda_pe, dtype=float)
    lam_i = 1.0 / (1.0 / lambda_pe - 1.0 / lambda_s)
    return jsi(lambda_s, lam_i, pump, src) * (lam_i / lambda_pe) ** 2, lam_i


def conjugate_band(signal_filter: WavelengthBand, idler_filter: WavelengthBand,
                   pump: PumpSetting) -> WavelengthBand | None:
    """Part of ``signal_filter`` whose energy-conjugate partners fall in ``idler_filter``.

    Returns None when no such wavelength exists. Swapping the arguments gives
    the corresponding band on the idler axis.
    """
    lp = pump.lambda_p
    if lp >= signal_filter.lo or lp >= idler_filter.lo:
        raise ValidationError("pump wavelength must lie below both filter bands")
    # conjugation is decreasing, so the idler's hi edge maps to the low signal edge
    image = WavelengthBand(float(conjugate_wavelength(idler_filter.hi, lp)),
                           float(conjugate_wavelength(idler_filter.lo, lp)))
    return signal_filter.intersect(image)


def resolution_floor(chain: DetectorChain | None = None, *, sigma_sync=None,
                     sigma_pulse=None, sigma_det=None) -> float:
    """Timing resolution dt_min: the jitters added in quadrature (ps)."""
    if chain is not None:
        sigma_sync, sigma_pulse, sigma_det = chain.sigma_sync, chain.sigma_pulse, chain.sigma_det
    vals = (sigma_sync, sigma_pulse, sigma_det)
    if any(v is None or v < 0 for v in vals):
        raise ValidationError("jitters must be given and nonnegative")
    return math.sqrt(sum(v * v for v in vals))
