"""Coincidence histograms, marginals and filter-edge detection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import textio
from .dispersion import TimeAxis
from .errors import EdgeDetectionError, FormatError, ValidationError
from .events import IDLER, SIGNAL, EventStream

WHICH = {"signal": SIGNAL, "idler": IDLER}


class CorruptRecordError(FormatError):
    pass


@dataclass
class Histogram2D:
    """Coincidence counts; ``counts[s, i]`` indexes signal then idler bin."""

    axis: TimeAxis
    counts: np.ndarray
    integration_time: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = self.axis.n_bins
        if self.counts.shape != (n, n):
            raise ValidationError(f"counts shape {self.counts.shape} != ({n}, {n})")
        if np.any(self.counts < 0):
            raise ValidationError("histogram counts must be nonnegative")
        self.metadata.setdefault("truncated_last_bin", bool(self.axis.truncated))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_pulses(self) -> float:
        return self.integration_time * 1e12 / self.axis.period

    def __add__(self, other: "Histogram2D") -> "Histogram2D":
        if (other.axis.period, other.axis.bin_width) != (self.axis.period, self.axis.bin_width):
            raise ValidationError("cannot merge histograms on different time axes")
        md = dict(self.metadata)
        return Histogram2D(self.axis, self.counts + other.counts,
                           self.integration_time + other.integration_time, md)


@dataclass
class Histogram1D:
    axis: TimeAxis
    counts: np.ndarray
    which: str

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))


@dataclass
class EdgeReport:
    rising: float  # ps, unwrapped
    falling: float
    width: float
    rising_sharpness: float  # counts per bin across the half-level crossing
    falling_sharpness: float
    unwrap_shift: float  # start of the unwrapped window, ps
    plateau: float = 0.0
    background: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def accumulate(stream: EventStream, axis: TimeAxis, integration_time: float = 0.0,
               metadata: dict | None = None) -> Histogram2D:
    """Bin every (signal, idler) pairing that shares a pulse."""
    if int(round(axis.period)) != stream.period_ps:
        raise ValidationError(
            f"axis period {axis.period} ps does not match the stream's {stream.period_ps} ps")
    if not stream.is_sorted():
        raise ValidationError("event stream must be sorted by pulse_index")
    bad = np.flatnonzero(stream.time_ps >= stream.period_ps)
    if bad.size:
        raise CorruptRecordError(
            f"record {bad[0]} has time {stream.time_ps[bad[0]]} ps >= period {stream.period_ps}")
    n = axis.n_bins
    sig = stream.channel == SIGNAL
    idl = stream.channel == IDLER
    ps, ts = stream.pulse_index[sig], stream.time_ps[sig]
    pi, ti = stream.pulse_index[idl], stream.time_ps[idl]
    left = np.searchsorted(pi, ps, side="left")
    right = np.searchsorted(pi, ps, side="right")
    mult = right - left
    total = int(mult.sum())
    rep = np.repeat(np.arange(ps.size), mult)
    start = np.repeat(np.cumsum(mult) - mult, mult)
    idx = np.repeat(left, mult) + (np.arange(total) - start)
    bs = np.floor(ts[rep] / axis.bin_width).astype(np.int64)
    bi = np.floor(ti[idx] / axis.bin_width).astype(np.int64)
    counts = np.bincount(bs * n + bi, minlength=n * n).reshape(n, n)
    md = {"config_digest": stream.config_digest.hex()}
    md.update(metadata or {})
    return Histogram2D(axis, counts, integration_time, md)


def live_fraction(stream: EventStream, dead_times, n_pulses: int | None = None) -> dict:
    """Fraction of the run during which each detector, and both together, could click.

    Every recorded click opens a dead window of its channel's dead time;
    windows of one channel do not overlap (non-paralyzable). Poisson pair
    arrivals see these time averages, so ``both`` is the probability that a
    pair finds both detectors live.
    """
    period = stream.period_ps
    if n_pulses is None:
        n_pulses = int(stream.pulse_index.max()) + 1 if len(stream) else 1
    span = float(n_pulses) * period
    abs_t = stream.pulse_index.astype(np.float64) * period + stream.time_ps
    a = np.sort(abs_t[stream.channel == SIGNAL])
    b = np.sort(abs_t[stream.channel == IDLER])
    ts, ti = float(dead_times[0]), float(dead_times[1])
    dead_s = float(np.sum(np.minimum(ts, span - a))) / span
    dead_i = float(np.sum(np.minimum(ti, span - b))) / span
    both = 0.0
    if a.size and b.size and ts > 0 and ti > 0:
        j0 = np.searchsorted(b, a - ti, side="right")
        j1 = np.searchsorted(b, a + ts, side="left")
        k = j1 - j0
        rep = np.repeat(np.arange(a.size), k)
        idx = np.repeat(j0, k) + (np.arange(int(k.sum())) - np.repeat(np.cumsum(k) - k, k))
        lo = np.maximum(a[rep], b[idx])
        hi = np.minimum(np.minimum(a[rep] + ts, b[idx] + ti), span)
        both = float(np.sum(np.clip(hi - lo, 0.0, None))) / span
    return {"signal": 1.0 - dead_s, "idler": 1.0 - dead_i,
            "both": 1.0 - dead_s - dead_i + both}


def marginal(h: Histogram2D, which: str) -> Histogram1D:
    if which not in WHICH:
        raise ValidationError(f"which must be 'signal' or 'idler', got {which!r}")
    counts = h.counts.sum(axis=1 if which == "signal" else 0)
    return Histogram1D(h.axis, counts, which)


def _runs(mask):
    """(start, length) of True runs in a cyclic boolean array."""
    n = mask.size
    if mask.all():
        return [(0, n)]
    if not mask.any():
        return []
    first_false = int(np.argmin(mask))
    rolled = np.roll(mask, -first_false)
    d = np.diff(np.concatenate([[0], rolled.astype(np.int8), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [((s + first_false) % n, e - s) for s, e in zip(starts, ends)]


def detect_edges(m: Histogram1D, background_quantile: float = 0.05,
                 noise_bins: int = 1) -> EdgeReport:
    """Locate the rising and falling half-maximum crossings of a marginal.

    The plateau level is the median of the top quartile of bins above the
    rough half level; the background is the ``background_quantile`` of all
    bins. Crossings are linearly interpolated between bin centres. The
    region may wrap around the period; it is unwrapped by starting the
    window in the middle of the widest below-half stretch. Runs or gaps of at
    most ``noise_bins`` bins are treated as counting noise; any other second
    region is ambiguous and raises.
    """
    axis = m.axis
    y = np.asarray(m.counts, dtype=float).copy()
    n = y.size
    if n < 4:
        raise EdgeDetectionError("marginal too short")
    widths = axis.bin_widths()
    starts = axis.bin_edges()[:-1]
    if axis.truncated:
        # put the short final bin on the same per-ps scale as the rest
        y[-1] *= axis.bin_width / widths[-1]
    centres = starts + 0.5 * widths

    bg = float(np.quantile(y, background_quantile))
    top = y.max()
    rough = y[y > bg + 0.5 * (top - bg)]
    if top <= bg or rough.size == 0:
        raise EdgeDetectionError("no plateau found above background")
    upper = rough[rough >= np.quantile(rough, 0.75)]
    plateau = float(np.median(upper))
    if plateau - bg < 3.0 * np.sqrt(max(bg, 1.0)):
        raise EdgeDetectionError(
            f"plateau ({plateau:.1f}) not significant over background ({bg:.1f})")
    half = bg + 0.5 * (plateau - bg)

    above = y > half
    runs = [r for r in _runs(above) if r[1] > noise_bins]
    if not runs:
        raise EdgeDetectionError("no contiguous region above the half level")
    # bridge noise gaps between runs
    merged = [list(runs[0])]
    for s, ln in runs[1:]:
        prev = merged[-1]
        gap = (s - (prev[0] + prev[1])) % n
        if gap <= noise_bins:
            prev[1] = (s + ln - prev[0]) % n or n
        else:
            merged.append([s, ln])
    if len(merged) > 1:
        first, last = merged[0], merged[-1]
        gap = (first[0] - (last[0] + last[1])) % n
        if gap <= noise_bins:
            last[1] = last[1] + gap + first[1]
            merged.pop(0)
    if len(merged) != 1:
        raise EdgeDetectionError(
            f"{len(merged)} disjoint regions above the half level; support is ambiguous")
    r_start, r_len = merged[0]
    if r_len >= n - 1:
        raise EdgeDetectionError("region fills the whole period; no edges to find")

    # window starts midway through the below-half stretch
    gap_len = n - r_len
    w0 = (r_start + r_len + gap_len // 2) % n
    shift = float(starts[w0])
    order = (w0 + np.arange(n)) % n
    yu = y[order]
    cu = centres[order] + np.where(order < w0, axis.period, 0.0)
    i0 = (r_start - w0) % n
    i1 = i0 + r_len - 1

    def cross(a, b):
        ya, yb = yu[a], yu[b]
        frac = (half - ya) / (yb - ya) if yb != ya else 0.5
        return cu[a] + frac * (cu[b] - cu[a]), abs(yb - ya)

    rising, s_r = cross(i0 - 1, i0)
    falling, s_f = cross(i1, i1 + 1)
    # report the rising edge inside [0, period); the falling edge may run past it
    wrap = np.floor(rising / axis.period) * axis.period
    rising, falling = rising - wrap, falling - wrap
    return EdgeReport(float(rising), float(falling), float(falling - rising), float(s_r),
                      float(s_f), shift, plateau, bg)


# ---------------------------------------------------------------- file formats

def write_histogram(h: Histogram2D, path) -> None:
    header = {
        "period_ps": h.axis.period,
        "bin_width_ps": h.axis.bin_width,
        "offset_ps": h.axis.offset,
        "n_bins": h.axis.n_bins,
        "integration_time_s": h.integration_time,
    }
    for k in sorted(h.metadata):
        header[f"meta.{k}"] = h.metadata[k]
    textio.write(path, "fiberspec histogram2d", header, {"counts": h.counts})


def read_histogram(path) -> Histogram2D:
    header, sections = textio.read(path, "fiberspec histogram2d")
    try:
        axis = TimeAxis(header["period_ps"], header["bin_width_ps"], header.get("offset_ps", 0.0))
        counts = textio.as_array(sections["counts"], dtype=np.int64)
        integ = header["integration_time_s"]
    except KeyError as exc:
        raise FormatError(f"histogram file misses {exc.args[0]}") from None
    md = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    return Histogram2D(axis, counts, integ, md)


def write_marginal(m: Histogram1D, path) -> None:
    header = {"which": m.which, "period_ps": m.axis.period, "bin_width_ps": m.axis.bin_width}
    t = m.axis.bin_edges()[:-1]
    textio.write(path, "fiberspec marginal", header,
                 {"t_ps_counts": np.column_stack([t, m.counts])}, {"t_ps_counts": "%.17g"})


def read_marginal(path) -> Histogram1D:
    header, sections = textio.read(path, "fiberspec marginal")
    arr = textio.as_array(sections["t_ps_counts"])
    return Histogram1D(TimeAxis(header["period_ps"], header["bin_width_ps"]),
                       arr[:, 1].astype(np.int64), header["which"])


def write_edges(reports: dict, path) -> None:
    header = {}
    for which, rep in reports.items():
        for k, v in rep.to_dict().items():
            header[f"{which}.{k}_ps" if k in ("rising", "falling", "width", "unwrap_shift")
                   else f"{which}.{k}"] = v
    textio.write(path, "fiberspec edges", header, {})


def read_edges(path) -> dict:
    header, _ = textio.read(path, "fiberspec edges")
    out = {}
    for which in ("signal", "idler"):
        if f"{which}.rising_ps" not in header:
            continue
        out[which] = EdgeReport(
            rising=header[f"{which}.rising_ps"], falling=header[f"{which}.falling_ps"],
            width=header[f"{which}.width_ps"],
            rising_sharpness=header[f"{which}.rising_sharpness"],
            falling_sharpness=header[f"{which}.falling_sharpness"],
            unwrap_shift=header[f"{which}.unwrap_shift_ps"],
            plateau=header.get(f"{which}.plateau", 0.0),
            background=header.get(f"{which}.background", 0.0))
    return out
