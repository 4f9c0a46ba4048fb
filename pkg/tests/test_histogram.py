import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_run
from fiberspec.dispersion import TimeAxis, time_width
from fiberspec.errors import EdgeDetectionError, ValidationError
from fiberspec.events import IDLER, SIGNAL, EventStream
from fiberspec.histogram import (CorruptRecordError, Histogram1D, Histogram2D, accumulate,
                                 detect_edges, live_fraction, marginal, read_edges,
                                 read_histogram, read_marginal, write_edges, write_histogram,
                                 write_marginal)
from fiberspec.simulate import apply_dead_time, sample_pairs
from fiberspec.spdc import conjugate_band

AXIS = TimeAxis(24500, 64)


def stream(records, period=24500):
    recs = sorted(records, key=lambda r: r[1])
    return EventStream.from_records(recs, period)


def rectangle(n, lo, hi, height=1000.0, bg=0.0):
    y = np.full(n, bg)
    y[lo:hi + 1] = height
    return y


def test_single_pair_lands_in_one_bin():
    h = accumulate(stream([(SIGNAL, 0, 100), (IDLER, 0, 200)]), AXIS)
    assert h.total == 1 and h.counts[1, 3] == 1


def test_no_coincidences_gives_zero_matrix():
    h = accumulate(stream([(SIGNAL, 0, 100), (IDLER, 1, 200), (SIGNAL, 5, 7)]), AXIS)
    assert h.total == 0


def test_all_pairs_within_a_pulse():
    h = accumulate(stream([(SIGNAL, 3, 0), (SIGNAL, 3, 64), (IDLER, 3, 128), (IDLER, 3, 640)]),
                   AXIS)
    assert h.total == 4
    assert h.counts[0, 2] == h.counts[1, 2] == h.counts[0, 10] == h.counts[1, 10] == 1


def test_axis_with_truncated_last_bin():
    assert AXIS.n_bins == 383
    assert AXIS.last_bin_width == pytest.approx(52.0)
    h = accumulate(stream([(SIGNAL, 0, 24499), (IDLER, 0, 24448)]), AXIS)
    assert h.counts[382, 382] == 1
    assert h.metadata["truncated_last_bin"] is True


def test_corrupt_time_is_hard_error():
    s = EventStream([SIGNAL], [0], [24500], 24500)
    with pytest.raises(CorruptRecordError):
        accumulate(s, AXIS)


def test_unsorted_stream_rejected():
    s = EventStream([SIGNAL, IDLER], [5, 1], [0, 0], 24500)
    with pytest.raises(ValidationError):
        accumulate(s, AXIS)


def test_marginal_conservation_and_delta(rng):
    counts = rng.integers(0, 5, (AXIS.n_bins, AXIS.n_bins))
    h = Histogram2D(AXIS, counts, 1.0)
    for arm in ("signal", "idler"):
        assert marginal(h, arm).total == h.total
    d = np.zeros((AXIS.n_bins, AXIS.n_bins), int)
    d[7, 300] = 1
    ms, mi = marginal(Histogram2D(AXIS, d, 1.0), "signal"), marginal(Histogram2D(AXIS, d, 1.0), "idler")
    assert ms.counts[7] == 1 and ms.total == 1
    assert mi.counts[300] == 1 and mi.total == 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 300), cut=st.floats(0, 1))
def test_accumulate_is_additive(seed, n, cut):
    rng = np.random.default_rng(seed)
    pulses = np.sort(rng.integers(0, 50, n))
    s = EventStream(rng.integers(0, 2, n), pulses, rng.integers(0, 24500, n), 24500)
    k = int(cut * n)
    # split between pulses, as a partitioned stream would be
    while 0 < k < n and pulses[k] == pulses[k - 1]:
        k += 1
    a, b = s.select(np.arange(n) < k), s.select(np.arange(n) >= k)
    whole = accumulate(s, AXIS)
    assert np.array_equal(whole.counts, (accumulate(a, AXIS) + accumulate(b, AXIS)).counts)


def test_accumulate_order_insensitive_within_pulse(rng):
    recs = [(int(c), int(p), int(t)) for c, p, t in
            zip(rng.integers(0, 2, 200), np.sort(rng.integers(0, 20, 200)), rng.integers(0, 24500, 200))]
    shuffled = list(recs)
    rng.shuffle(shuffled)
    a = accumulate(stream(recs), AXIS)
    b = accumulate(stream(shuffled), AXIS)
    assert np.array_equal(a.counts, b.counts)


def test_rectangle_edges():
    m = Histogram1D(AXIS, rectangle(AXIS.n_bins, 50, 200), "signal")
    e = detect_edges(m)
    assert e.rising == pytest.approx(50 * 64.0)
    assert e.width == pytest.approx(151 * 64.0, abs=64.0)
    assert e.falling - e.rising == pytest.approx(e.width)


@pytest.mark.parametrize("shift", [0, 100, 250, 300, 382])
def test_rotation_invariance(shift):
    base = rectangle(AXIS.n_bins - 1, 50, 200, bg=3.0)
    axis = TimeAxis(382 * 64, 64)
    ref = detect_edges(Histogram1D(axis, base, "signal"))
    rot = detect_edges(Histogram1D(axis, np.roll(base, shift), "signal"))
    assert rot.width == pytest.approx(ref.width, abs=64.0)
    assert (rot.rising - ref.rising - shift * 64) % axis.period == pytest.approx(0.0, abs=64.0)


def test_ambiguous_regions_raise():
    y = rectangle(AXIS.n_bins, 50, 100) + rectangle(AXIS.n_bins, 200, 260)
    with pytest.raises(EdgeDetectionError):
        detect_edges(Histogram1D(AXIS, y, "signal"))


def test_flat_marginal_raises():
    with pytest.raises(EdgeDetectionError):
        detect_edges(Histogram1D(AXIS, np.full(AXIS.n_bins, 10.0), "idler"))


def test_half_level_uses_background():
    y = rectangle(AXIS.n_bins, 100, 180, height=1000.0, bg=200.0)
    y[99] = 600.0  # exactly half way between background and plateau
    e = detect_edges(Histogram1D(AXIS, y, "signal"))
    assert e.rising == pytest.approx(99.5 * 64.0)
    assert e.background == pytest.approx(200.0) and e.plateau == pytest.approx(1000.0)


def test_edge_width_converges_on_simulation():
    rc = make_run(**{"run.duration_s": 170.0, "run.rng_seed": 21, "pump.detuning_nm": 0.25})
    s = sample_pairs(rc)
    h = accumulate(s, TimeAxis(rc.period_ps, 64), rc.duration)
    assert h.total >= 10**5
    sb = conjugate_band(rc.filters.signal.band, rc.filters.idler.band, rc.pump)
    ib = conjugate_band(rc.filters.idler.band, rc.filters.signal.band, rc.pump)
    for arm, band in (("signal", sb), ("idler", ib)):
        e = detect_edges(marginal(h, arm))
        assert abs(e.width - time_width(band, rc.dispersion)) < 180.0


def test_live_fraction_against_grid(rng):
    period = 1000
    n_pulses = 200
    recs = sorted(zip(rng.integers(0, 2, 150).tolist(), rng.integers(0, n_pulses, 150).tolist(),
                      rng.integers(0, period, 150).tolist()), key=lambda r: (r[1], r[2]))
    dead = (700, 1300)
    s = EventStream.from_records(recs, period)
    abs_t = s.pulse_index.astype(np.int64) * period + s.time_ps
    # a recorded stream never holds a click inside its own channel's dead window
    s = s.select(apply_dead_time(s.channel, abs_t, dead))
    got = live_fraction(s, dead, n_pulses)
    # brute force on a 1-ps grid
    span = n_pulses * period
    grid = np.arange(span) + 0.5
    abs_t = s.pulse_index.astype(np.int64) * period + s.time_ps
    live = {}
    for ch in (SIGNAL, IDLER):
        mask = np.zeros(span, bool)
        for t in np.sort(abs_t[s.channel == ch]):
            mask[int(t):int(min(t + dead[ch], span))] = True
        live[ch] = ~mask
    assert got["signal"] == pytest.approx(live[SIGNAL].mean(), abs=1e-9)
    assert got["idler"] == pytest.approx(live[IDLER].mean(), abs=1e-9)
    assert got["both"] == pytest.approx((live[SIGNAL] & live[IDLER]).mean(), abs=1e-9)
    assert grid.size == span


def test_live_fraction_no_dead_time(rng):
    s = EventStream.from_records([(0, 1, 5), (1, 1, 8)], 100)
    assert live_fraction(s, (0, 0), 10) == {"signal": 1.0, "idler": 1.0, "both": 1.0}


def test_file_roundtrips(tmp_path, rng):
    counts = rng.integers(0, 9, (AXIS.n_bins, AXIS.n_bins))
    h = Histogram2D(AXIS, counts, 12.5, {"filters": "beta", "detuning_nm": 0.1})
    write_histogram(h, tmp_path / "h.txt")
    back = read_histogram(tmp_path / "h.txt")
    assert np.array_equal(back.counts, h.counts) and back.integration_time == 12.5
    assert back.metadata["filters"] == "beta" and back.axis.n_bins == 383
    m = marginal(h, "idler")
    write_marginal(m, tmp_path / "m.txt")
    mb = read_marginal(tmp_path / "m.txt")
    assert np.array_equal(mb.counts, m.counts) and mb.which == "idler"
    e = detect_edges(Histogram1D(AXIS, rectangle(AXIS.n_bins, 10, 40), "signal"))
    write_edges({"signal": e}, tmp_path / "e.txt")
    assert read_edges(tmp_path / "e.txt")["signal"] == e
