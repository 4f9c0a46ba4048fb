"""Temporal histograms to spectral brightness, loss correction and stitching.

Arrival time maps monotonically onto wavelength, so each time bin has an
exact wavelength image. Dividing the counts by the wavelength cell area
(instead of multiplying by a point-sampled L*D) keeps the pair count exactly
conserved.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import textio
from .dispersion import DispersionModel, TimeAxis, WavelengthBand, time_width, wavelength_at
from .errors import EdgeDetectionError, FormatError, NumericalError, ValidationError
from .histogram import EdgeReport, Histogram2D, detect_edges, marginal
from .instrument import FilterPair
from .spdc import PumpSetting, SpectralBrightnessGrid, conjugate_band

log = logging.getLogger(__name__)

DT_MIN_PS = 180.0


class AnchorMismatchError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


@dataclass(frozen=True)
class RunAnchor:
    """Time origin of one run: a wavelength and the arrival time it maps to, per arm.

    ``signal_band``/``idler_band`` are the conjugate-clipped bands whose edges
    were matched; they also define the run's spectral coverage.
    """

    signal: tuple  # (lambda_ref nm, t_ref ps)
    idler: tuple
    source: str = ""
    signal_band: WavelengthBand | None = None
    idler_band: WavelengthBand | None = None

    def __post_init__(self):
        for arm, band in (("signal", self.signal_band), ("idler", self.idler_band)):
            lam = getattr(self, arm)[0]
            if band is not None and not band.lo - 1e-9 <= lam <= band.hi + 1e-9:
                raise ValidationError(f"{arm} anchor {lam} nm lies outside its band "
                                      f"({band.lo}, {band.hi})")

    def to_dict(self) -> dict:
        d = {"signal": list(self.signal), "idler": list(self.idler), "source": self.source}
        for arm in ("signal", "idler"):
            b = getattr(self, f"{arm}_band")
            d[f"{arm}_band"] = None if b is None else [b.lo, b.hi]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunAnchor":
        bands = {f"{a}_band": None if d.get(f"{a}_band") is None
                 else WavelengthBand(*d[f"{a}_band"]) for a in ("signal", "idler")}
        return cls(tuple(d["signal"]), tuple(d["idler"]), d.get("source", ""), **bands)


@dataclass
class TuningCurve:
    """Brightness versus detuning (columns) and wavelength (rows)."""

    detuning_axis: np.ndarray
    wavelength_axis: np.ndarray
    values: np.ndarray  # (n_wavelength, n_detuning)
    variance: np.ndarray
    gaps: np.ndarray  # True where no run covers the cell
    conflicts: np.ndarray  # True where overlapping runs disagree
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (np.size(self.wavelength_axis), np.size(self.detuning_axis))
        for name in ("values", "variance", "gaps", "conflicts"):
            if np.shape(getattr(self, name)) != shape:
                raise ValidationError(f"tuning curve {name} shape != {shape}")
        ok = ~self.gaps & ~self.conflicts
        if np.any(self.values[ok] < 0):
            raise ValidationError("tuning-curve values must be nonnegative where unmasked")

    def span(self) -> float:
        """Wavelength extent (nm) covered by at least one column."""
        covered = np.flatnonzero((~self.gaps).any(axis=1))
        if covered.size == 0:
            return 0.0
        step = np.diff(self.wavelength_axis).mean() if self.wavelength_axis.size > 1 else 0.0
        return float(self.wavelength_axis[covered[-1]] - self.wavelength_axis[covered[0]] + step)


# ---------------------------------------------------------------- anchoring

def run_bands(filters: FilterPair, pump: PumpSetting):
    """Conjugate-clipped (signal, idler) bands for a run."""
    sb = conjugate_band(filters.signal.band, filters.idler.band, pump)
    ib = conjugate_band(filters.idler.band, filters.signal.band, pump)
    if sb is None or ib is None:
        raise ValidationError(f"filters {filters.label!r} pass no conjugate pairs at "
                              f"lambda_p = {pump.lambda_p} nm")
    return sb, ib


def anchor_from_edges(edges: dict, filters: FilterPair, pump: PumpSetting,
                      model: DispersionModel, dt_min: float = DT_MIN_PS) -> RunAnchor:
    """Match each detected rising edge to its band's short-wavelength edge.

    With D > 0 longer wavelengths arrive later, so the rising edge is the
    cut-on. The falling edge is checked against the model's predicted width.
    """
    bands = dict(zip(("signal", "idler"), run_bands(filters, pump)))
    refs = {}
    for arm in ("signal", "idler"):
        rep: EdgeReport = edges[arm]
        band = bands[arm]
        refs[arm] = (band.lo, float(rep.rising))
        miss = rep.width - time_width(band, model)
        if abs(miss) > 2.0 * dt_min:
            log.warning("%s falling edge is %.0f ps off the predicted band width", arm, miss)
    return RunAnchor(refs["signal"], refs["idler"], "rising edge = band cut-on",
                     bands["signal"], bands["idler"])


def predicted_anchor(filters: FilterPair, pump: PumpSetting, model: DispersionModel,
                     reference: RunAnchor, reference_pump: PumpSetting,
                     reference_filters: FilterPair) -> RunAnchor:
    """Anchor a run from another run of the same campaign.

    Channel offsets do not change between runs, so a band edge's arrival
    time follows from the reference anchor and the group-delay difference.
    Used when a run's own edges cannot be detected.
    """
    from .dispersion import group_delay

    sb, ib = run_bands(filters, pump)
    out = {}
    for arm, band in (("signal", sb), ("idler", ib)):
        lam_ref, t_ref = getattr(reference, arm)
        t = t_ref + float(group_delay(band.lo, model) - group_delay(lam_ref, model))
        out[arm] = (band.lo, t)
    return RunAnchor(out["signal"], out["idler"], "propagated from campaign reference", sb, ib)


# ---------------------------------------------------------------- inversion

def _arm_mapping(axis: TimeAxis, anchor_arm, band, model):
    """Bin order, unwrapped time edges and wavelength edges for one arm."""
    lam_ref, t_ref = anchor_arm
    period = axis.period
    width = time_width(band, model) if band is not None else 0.0
    guard = 0.5 * max(period - width, 0.0)
    starts = axis.bin_edges()[:-1]
    w = axis.with_offset(0.0).unwrap(t_ref - guard)
    first = int(np.searchsorted(starts, w, side="right") - 1)
    n = axis.n_bins
    order = (first + np.arange(n)) % n
    widths = axis.bin_widths()[order]
    t0 = starts[first]
    # place the window so that t_ref sits inside it
    t_ref_u = t0 + np.mod(t_ref - t0, period)
    t_edges = t0 + np.concatenate([[0.0], np.cumsum(widths)])
    lam_edges = wavelength_at(t_edges, model, None, (lam_ref, t_ref_u))
    return order, lam_edges


def _check_anchor(h: Histogram2D, anchor: RunAnchor, dt_min: float):
    for arm in ("signal", "idler"):
        try:
            rep = detect_edges(marginal(h, arm))
        except EdgeDetectionError:
            continue  # too few counts to check against
        t_ref = getattr(anchor, arm)[1]
        d = (rep.rising - t_ref + 0.5 * h.axis.period) % h.axis.period - 0.5 * h.axis.period
        if abs(d) > 2.0 * dt_min:
            raise AnchorMismatchError(
                f"{arm} anchor time {t_ref:.0f} ps is {d:.0f} ps from the detected cut-on")


def invert_histogram(h: Histogram2D, model: DispersionModel, anchor: RunAnchor,
                     dt_min: float = DT_MIN_PS, check: bool = True,
                     metadata: dict | None = None) -> SpectralBrightnessGrid:
    """Spectral brightness (pairs per pulse per nm^2) on the induced wavelength grid."""
    if check:
        _check_anchor(h, anchor, dt_min)
    n_pulses = h.n_pulses
    if not n_pulses > 0:
        raise ValidationError("histogram has no integration time")
    try:
        so, sl = _arm_mapping(h.axis, anchor.signal, anchor.signal_band, model)
        io, il = _arm_mapping(h.axis, anchor.idler, anchor.idler_band, model)
    except NumericalError as exc:
        raise type(exc)(f"time bins map below lambda0: {exc}") from None
    counts = h.counts[np.ix_(so, io)].astype(float)
    area = np.diff(sl)[:, None] * np.diff(il)[None, :]
    values = counts / (n_pulses * area)
    variance = np.maximum(counts, 1.0) / (n_pulses * area) ** 2
    md = {
        "normalization": "raw",
        "anchor": anchor.to_dict(),
        "integration_time_s": h.integration_time,
        "config_digest": h.metadata.get("config_digest", ""),
        "dispersion": model.to_config(),
        "live_fraction": h.metadata.get("live_fraction", 1.0),
    }
    md.update(metadata or {})
    return SpectralBrightnessGrid(0.5 * (sl[1:] + sl[:-1]), 0.5 * (il[1:] + il[:-1]), values,
                                  md, sl, il, variance)


# ---------------------------------------------------------------- correction

@dataclass(frozen=True)
class LossTable:
    """Wavelength-dependent loss in dB, linearly interpolated.

    A single row is a flat loss at every wavelength.
    """

    wavelength: np.ndarray
    loss_db: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.wavelength, dtype=float))
        l = np.atleast_1d(np.asarray(self.loss_db, dtype=float))
        if w.shape != l.shape or w.size == 0:
            raise ValidationError("loss table needs matching, nonempty columns")
        if w.size > 1 and np.any(np.diff(w) <= 0):
            raise ValidationError("loss table wavelengths must increase")
        object.__setattr__(self, "wavelength", w)
        object.__setattr__(self, "loss_db", l)

    @classmethod
    def flat(cls, loss_db: float) -> "LossTable":
        return cls(np.array([0.0]), np.array([loss_db]))

    def covers(self, lo: float, hi: float) -> bool:
        return self.wavelength.size == 1 or (self.wavelength[0] <= lo and hi <= self.wavelength[-1])

    def transmission(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.wavelength.size == 1:
            db = np.full(lam.shape, self.loss_db[0])
        else:
            db = np.interp(lam, self.wavelength, self.loss_db)
        return 10.0 ** (-db / 10.0)


def read_loss_table(path) -> LossTable:
    try:
        arr = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read loss table {path}: {exc}") from None
    if arr.shape[1] != 2:
        raise FormatError(f"{path}: loss table needs two columns (wavelength_nm loss_db)")
    return LossTable(arr[:, 0], arr[:, 1])


def _support(grid: SpectralBrightnessGrid, arm: str):
    band = grid.metadata.get("anchor", {}).get(f"{arm}_band")
    if band is not None:
        return band
    ax = grid.lambda_s_axis if arm == "signal" else grid.lambda_i_axis
    return [float(ax[0]), float(ax[-1])]


def correct_spectrum(raw: SpectralBrightnessGrid, losses, pump_power: float,
                     live_fraction: float | None = None) -> SpectralBrightnessGrid:
    """Divide out both arms' transmission, the pump power and the dead-time live fraction.

    ``live_fraction`` defaults to the value recorded with the histogram (1 if absent).
    """
    if raw.normalization != "raw":
        raise ValidationError(f"expected a raw spectrum, got {raw.normalization!r}")
    if not pump_power > 0:
        raise ValidationError("pump power must be positive")
    if live_fraction is None:
        live_fraction = float(raw.metadata.get("live_fraction", 1.0))
    if not 0 < live_fraction <= 1:
        raise ValidationError(f"live fraction must lie in (0, 1], got {live_fraction}")
    s_loss, i_loss = losses
    for arm, table in (("signal", s_loss), ("idler", i_loss)):
        lo, hi = _support(raw, arm)
        if not table.covers(lo, hi):
            raise CoverageError(f"{arm} loss table does not cover {lo:.2f}-{hi:.2f} nm")
    ts = s_loss.transmission(raw.lambda_s_axis)
    ti = i_loss.transmission(raw.lambda_i_axis)
    scale = 1.0 / (ts[:, None] * ti[None, :] * pump_power * live_fraction)
    var = None if raw.variance is None else raw.variance * scale**2
    return raw.with_values(raw.values * scale, var, normalization="corrected",
                           pump_power_mw=pump_power, applied_live_fraction=live_fraction)


# ---------------------------------------------------------------- stitching

def arm_marginal(grid: SpectralBrightnessGrid, arm: str):
    """(edges, density, variance) of one arm's marginal, integrated over the other arm."""
    ws, wi = grid.cell_widths()
    var = grid.variance if grid.variance is not None else np.zeros_like(grid.values)
    if arm == "signal":
        return grid.lambda_s_edges, grid.values @ wi, var @ (wi**2)
    return grid.lambda_i_edges, ws @ grid.values, (ws**2) @ var


def rebin(src_edges, density, variance, dst_edges):
    """Conservative rebinning of a piecewise-constant density."""
    src_edges = np.asarray(src_edges, dtype=float)
    dst_edges = np.asarray(dst_edges, dtype=float)
    lo = np.maximum(src_edges[:-1, None], dst_edges[None, :-1])
    hi = np.minimum(src_edges[1:, None], dst_edges[None, 1:])
    w = np.clip(hi - lo, 0.0, None) / np.diff(dst_edges)[None, :]
    return density @ w, variance @ (w**2)


def default_wavelength_edges(runs, step: float = 0.5):
    lo = min(min(_support(g, a)[0] for a in ("signal", "idler")) for g, _ in runs)
    hi = max(max(_support(g, a)[1] for a in ("signal", "idler")) for g, _ in runs)
    lo = math.floor(lo / step) * step
    hi = math.ceil(hi / step) * step
    return np.round(np.arange(lo, hi + 0.5 * step, step), 9)


def _run_key(item):
    g, p = item
    a = g.metadata.get("anchor", {})
    return (round(p.detuning, 9), str(g.metadata.get("filters", "")),
            json_key(a.get("signal_band")), json_key(a.get("idler_band")))


def json_key(v):
    return "" if v is None else ",".join(f"{x:.9f}" for x in v)


def stitch(runs, wavelength_edges=None, step: float = 0.5,
           conflict_sigma: float = 3.0) -> TuningCurve:
    """Combine corrected runs into a tuning curve.

    Each run contributes its signal and idler marginals, rebinned onto the
    common wavelength grid and restricted to cells whose centre lies inside
    the run's conjugate band. Overlapping contributions to a cell are
    inverse-variance averaged; a cell whose contributions disagree by more
    than ``conflict_sigma`` is flagged instead.
    """
    runs = list(runs)
    if not runs:
        raise ValidationError("stitch needs at least one run")
    states = {g.normalization for g, _ in runs}
    if states != {"corrected"}:
        raise ValidationError(f"runs must all be 'corrected', got {sorted(states)}")
    runs.sort(key=_run_key)
    edges = (default_wavelength_edges(runs, step) if wavelength_edges is None
             else np.asarray(wavelength_edges, dtype=float))
    centres = 0.5 * (edges[1:] + edges[:-1])
    dets = np.array(sorted({round(p.detuning, 9) for _, p in runs}))
    nw, nd = centres.size, dets.size
    contrib = [[[] for _ in range(nd)] for _ in range(nw)]
    for g, p in runs:
        col = int(np.searchsorted(dets, round(p.detuning, 9)))
        for arm in ("signal", "idler"):
            se, dens, var = arm_marginal(g, arm)
            v, vv = rebin(se, dens, var, edges)
            lo, hi = _support(g, arm)
            inside = np.flatnonzero((centres >= lo) & (centres <= hi))
            for k in inside:
                contrib[k][col].append((v[k], vv[k]))
    values = np.zeros((nw, nd))
    variance = np.zeros((nw, nd))
    gaps = np.ones((nw, nd), dtype=bool)
    conflicts = np.zeros((nw, nd), dtype=bool)
    for k in range(nw):
        for c in range(nd):
            items = contrib[k][c]
            if not items:
                continue
            gaps[k, c] = False
            x = np.array([a for a, _ in items])
            s2 = np.array([b for _, b in items])
            if np.any(s2 <= 0):
                s2 = np.where(s2 <= 0, np.max(s2[s2 > 0], initial=1e-300), s2)
            if x.size > 1:
                diff = np.abs(x[:, None] - x[None, :])
                if np.any(diff > conflict_sigma * np.sqrt(s2[:, None] + s2[None, :])):
                    conflicts[k, c] = True
                    values[k, c] = np.nan
                    variance[k, c] = np.nan
                    continue
            w = 1.0 / s2
            values[k, c] = np.sum(w * x) / np.sum(w)
            variance[k, c] = 1.0 / np.sum(w)
    md = {"normalization": "corrected", "n_runs": len(runs),
          "wavelength_edges_nm": [float(e) for e in edges]}
    return TuningCurve(dets, centres, values, variance, gaps, conflicts, md)


# ---------------------------------------------------------------- file formats

def write_spectrum(grid: SpectralBrightnessGrid, path) -> None:
    header = {f"meta.{k}": grid.metadata[k] for k in sorted(grid.metadata)}
    sections = {"lambda_s_edges_nm": grid.lambda_s_edges, "lambda_i_edges_nm": grid.lambda_i_edges,
                "values": grid.values}
    if grid.variance is not None:
        sections["variance"] = grid.variance
    textio.write(path, "fiberspec spectrum", header, sections)


def read_spectrum(path) -> SpectralBrightnessGrid:
    header, sections = textio.read(path, "fiberspec spectrum")
    try:
        se = textio.as_array(sections["lambda_s_edges_nm"], ndim=1)
        ie = textio.as_array(sections["lambda_i_edges_nm"], ndim=1)
        values = textio.as_array(sections["values"])
    except KeyError as exc:
        raise FormatError(f"spectrum file misses [{exc.args[0]}]") from None
    var = textio.as_array(sections["variance"]) if "variance" in sections else None
    md = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    return SpectralBrightnessGrid(0.5 * (se[1:] + se[:-1]), 0.5 * (ie[1:] + ie[:-1]),
                                  values.reshape(se.size - 1, ie.size - 1), md, se, ie,
                                  None if var is None else var.reshape(values.shape))


def write_tuning_curve(tc: TuningCurve, path) -> None:
    header = {f"meta.{k}": tc.metadata[k] for k in sorted(tc.metadata)}
    textio.write(path, "fiberspec tuning-curve", header, {
        "detuning_nm": tc.detuning_axis,
        "wavelength_nm": tc.wavelength_axis,
        "values": tc.values,
        "variance": tc.variance,
        "gaps": tc.gaps.astype(np.int8),
        "conflicts": tc.conflicts.astype(np.int8),
    })


def read_tuning_curve(path) -> TuningCurve:
    header, sec = textio.read(path, "fiberspec tuning-curve")
    try:
        d = textio.as_array(sec["detuning_nm"], ndim=1)
        w = textio.as_array(sec["wavelength_nm"], ndim=1)
        shape = (w.size, d.size)

        def mat(name, dtype=float):
            return textio.as_array(sec[name], dtype=dtype).reshape(shape)

        md = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
        return TuningCurve(d, w, mat("values"), mat("variance"), mat("gaps", int).astype(bool),
                           mat("conflicts", int).astype(bool), md)
    except KeyError as exc:
        raise FormatError(f"tuning-curve file misses [{exc.args[0]}]") from None
