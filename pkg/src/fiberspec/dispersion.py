"""Fiber dispersion: D-parameter, group delay and the wavelength <-> time map.

Units throughout: wavelength in nm, time in ps, length in km, slope S0 in
ps/(nm^2 km), D in ps/(nm km).

The D-parameter of a standard single-mode spool is modelled as

    D(lam) = S0/4 * (lam - lam0**4 / lam**3)

whose antiderivative g(lam) = S0/8 * (lam**2 + lam0**4 / lam**2) gives the
group delay per unit length up to an additive constant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NoSolutionError, NonConvergenceError, ValidationError

#: wavelength tolerance used when inverting the group delay
INVERSION_XTOL_NM = 1e-6
_MAX_BRACKET_DOUBLINGS = 60
_MAX_ITER = 200


@dataclass(frozen=True)
class DispersionModel:
    s0: float  # ps/(nm^2 km)
    lambda0: float  # nm
    length: float  # km

    def __post_init__(self):
        for name in ("s0", "lambda0", "length"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValidationError(f"dispersion.{name} must be positive, got {v!r}")

    @property
    def kappa(self) -> float:
        """The identifiable product L*S0, ps/nm^2."""
        return self.length * self.s0

    def to_config(self) -> dict:
        return {
            "s0_ps_nm2_km": self.s0,
            "lambda0_nm": self.lambda0,
            "length_km": self.length,
        }

    @classmethod
    def from_config(cls, d: dict) -> "DispersionModel":
        try:
            return cls(
                s0=float(d["s0_ps_nm2_km"]),
                lambda0=float(d["lambda0_nm"]),
                length=float(d["length_km"]),
            )
        except KeyError as exc:
            raise ValidationError(f"dispersion.{exc.args[0]} missing") from None


#: reference 20 km SMF-28 spool used as the default dispersion
REFERENCE_SPOOL = DispersionModel(s0=0.0885, lambda0=1320.0, length=20.56)


@dataclass(frozen=True)
class WavelengthBand:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo > 0 and self.hi > 0):
            raise ValidationError(f"band edges must be positive: ({self.lo}, {self.hi})")
        if self.lo > self.hi:
            raise ValidationError(f"band lo > hi: ({self.lo}, {self.hi})")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, lam):
        return (np.asarray(lam) >= self.lo) & (np.asarray(lam) <= self.hi)

    def intersect(self, other: "WavelengthBand") -> "WavelengthBand | None":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        if lo >= hi:
            return None
        return WavelengthBand(lo, hi)


@dataclass(frozen=True)
class TimeAxis:
    """Arrival-time axis of one sync period.

    ``offset`` is the start of the unwrapped window: a raw time t in
    [0, period) unwraps to offset + ((t - offset) mod period).
    """

    period: float
    bin_width: float
    offset: float = 0.0

    def __post_init__(self):
        if not (0 < self.bin_width <= self.period):
            raise ValidationError(
                f"need 0 < bin_width <= period, got {self.bin_width}, {self.period}")
        if not (0 <= self.offset < self.period):
            raise ValidationError(f"offset must lie in [0, period), got {self.offset}")

    @property
    def n_bins(self) -> int:
        return int(np.ceil(self.period / self.bin_width - 1e-12))

    @property
    def last_bin_width(self) -> float:
        return self.period - (self.n_bins - 1) * self.bin_width

    @property
    def truncated(self) -> bool:
        return self.last_bin_width < self.bin_width

    def bin_edges(self) -> np.ndarray:
        edges = np.arange(self.n_bins + 1, dtype=float) * self.bin_width
        edges[-1] = self.period
        return edges

    def bin_widths(self) -> np.ndarray:
        return np.diff(self.bin_edges())

    def unwrap(self, t):
        t = np.asarray(t, dtype=float)
        return self.offset + np.mod(t - self.offset, self.period)

    def with_offset(self, offset: float) -> "TimeAxis":
        return TimeAxis(self.period, self.bin_width, float(np.mod(offset, self.period)))


def d_param(lam, model: DispersionModel):
    """D(lam) in ps/(nm km)."""
    lam = np.asarray(lam, dtype=float)
    return model.s0 / 4.0 * (lam - model.lambda0**4 / lam**3)


def _g(lam, kappa, lambda0):
    lam = np.asarray(lam, dtype=float)
    return kappa / 8.0 * (lam**2 + lambda0**4 / lam**2)


def group_delay(lam, model: DispersionModel):
    """Group delay L*g(lam) in ps, defined up to a constant.

    Only the anomalous branch lam >= lambda0 is accepted, where the map is
    monotone.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < model.lambda0):
        raise ValidationError(
            f"group_delay is only defined for lambda >= lambda0 = {model.lambda0} nm")
    out = _g(lam, model.kappa, model.lambda0)
    return float(out) if out.ndim == 0 else out


def time_width(band: WavelengthBand, model: DispersionModel) -> float:
    """Spread of arrival times L * integral(D) across ``band``, ps."""
    if band.lo < model.lambda0:
        raise ValidationError(
            f"band ({band.lo}, {band.hi}) reaches below lambda0 = {model.lambda0} nm")
    return width_from_kappa(band.lo, band.hi, model.kappa, model.lambda0)


def width_from_kappa(lo, hi, kappa, lambda0):
    """Closed-form L*int_lo^hi D dlam written in terms of kappa = L*S0."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = kappa / 8.0 * ((hi**2 - lo**2) + lambda0**4 * (1.0 / hi**2 - 1.0 / lo**2))
    return float(out) if out.ndim == 0 else out


def _solve_delay(target, lam_ref, model):
    """Find lam >= lambda0 with L*(g(lam) - g(lam_ref)) = target."""
    kappa, l0 = model.kappa, model.lambda0
    g_ref = _g(lam_ref, kappa, l0)
    floor = _g(l0, kappa, l0) - g_ref
    if target < floor:
        raise NoSolutionError(
            f"delay {target:.3f} ps lies below the lambda0 turning point ({floor:.3f} ps)")
    if target == 0.0:
        return float(lam_ref)

    def f(lam):
        return float(_g(lam, kappa, l0) - g_ref - target)

    lo, hi = l0, max(lam_ref, l0) * 1.01
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if f(hi) >= 0:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise NonConvergenceError(f"could not bracket delay {target} ps")
    try:
        lam, info = brentq(f, lo, hi, xtol=INVERSION_XTOL_NM * 1e-3, rtol=4 * np.finfo(float).eps,
                           maxiter=_MAX_ITER, full_output=True)
    except RuntimeError as exc:
        raise NonConvergenceError(str(exc)) from None
    if not info.converged:
        raise NonConvergenceError(f"brentq did not converge for delay {target} ps")
    return lam


def wavelength_at(t, model: DispersionModel, axis: TimeAxis | None, anchor):
    """Wavelength whose arrival time is ``t`` given the anchor (lam_ref, t_ref).

    When ``axis`` is given both ``t`` and ``t_ref`` are first unwrapped onto
    the axis window, so raw modulo-period times can be passed directly.
    Accepts scalars or arrays.
    """
    lam_ref, t_ref = anchor
    if lam_ref < model.lambda0:
        raise ValidationError(f"anchor wavelength {lam_ref} nm is below lambda0")
    t = np.asarray(t, dtype=float)
    if axis is not None:
        delay = axis.unwrap(t) - axis.unwrap(t_ref)
    else:
        delay = t - t_ref
    flat = np.atleast_1d(delay).ravel()
    out = np.array([_solve_delay(d, lam_ref, model) for d in flat])
    if delay.ndim == 0:
        return float(out[0])
    return out.reshape(delay.shape)
