"""Monte Carlo generation of timestamp streams for one spectrometer run.

Pulses are simulated in blocks. Every block draws from its own generator
spawned off ``SeedSequence(rng_seed)``, so a run is reproducible no matter how
the blocks are scheduled.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dispersion import REFERENCE_SPOOL, DispersionModel, group_delay
from .errors import EnvelopeError, ValidationError
from .events import IDLER, SIGNAL, EventStream
from .instrument import DetectorChain, FilterPair, standard_filter_pair
from .spdc import (PUMP_WINDOW_SIGMAS, PumpSetting, SourceModel, band_mean_pairs,
                   ridge_density)

log = logging.getLogger(__name__)

#: upper bound on the filtered mean pairs per pulse; the model ignores multi-pair physics
MAX_MEAN_PAIRS = 0.1
ENVELOPE_SAFETY = 1.2
_PAIRS_PER_BLOCK = 400_000


@dataclass(frozen=True)
class RunConfig:
    source: SourceModel = field(default_factory=SourceModel)
    pump: PumpSetting = field(default_factory=lambda: PumpSetting(774.5, 0.0, 1.0))
    filters: FilterPair = field(default_factory=lambda: standard_filter_pair("beta"))
    dispersion: DispersionModel = REFERENCE_SPOOL
    signal_chain: DetectorChain = field(default_factory=DetectorChain)
    idler_chain: DetectorChain = field(default_factory=DetectorChain)
    duration: float = 1.0  # s
    sync_rate: float = 40.8e6  # Hz
    rng_seed: int = 0
    signal_offset_ps: float = 0.0
    idler_offset_ps: float = 0.0
    bin_hint_ps: int = 64

    def __post_init__(self):
        if not self.duration > 0:
            raise ValidationError(f"run.duration_s must be positive, got {self.duration}")
        if not self.sync_rate > 0:
            raise ValidationError(f"run.sync_rate_hz must be positive, got {self.sync_rate}")
        if self.rng_seed < 0:
            raise ValidationError("run.rng_seed must be >= 0")
        self.pump.check(self.source)
        for f in (self.filters.signal, self.filters.idler):
            if f.band.lo <= self.pump.lambda_p:
                raise ValidationError("filter bands must lie above the pump wavelength")

    @property
    def period_ps(self) -> int:
        """Sync period rounded to the integer-ps resolution of the record format."""
        return int(round(1e12 / self.sync_rate))

    @property
    def n_pulses(self) -> int:
        return int(round(self.duration * 1e12 / self.period_ps))

    def digest(self) -> bytes:
        from .config import config_digest, run_config_to_dict
        return config_digest(run_config_to_dict(self))


def filtered_mean_pairs(config: RunConfig) -> float:
    """Mean pairs per pulse with both photons inside the filter supports."""
    return band_mean_pairs(config.filters.signal.support(), config.filters.idler.support(),
                           config.pump, config.source)


class RidgeSampler:
    """Rejection sampler for the filtered JSI.

    Candidates are uniform over lam_s in the signal support times a window of
    +-7 pump sigmas in effective pump wavelength; in these coordinates the
    anticorrelated ridge fills the box instead of a thin diagonal. The
    envelope is 1.2 x the maximum of the density on a grid.
    """

    def __init__(self, config: RunConfig, grid=(600, 61)):
        self.src = config.source
        self.pump = config.pump
        self.s_band = config.filters.signal.support()
        self.i_band = config.filters.idler.support()
        win = PUMP_WINDOW_SIGMAS * self.src.pump_sigma
        self.pe_lo = self.pump.lambda_p - win
        self.pe_hi = self.pump.lambda_p + win
        s = np.linspace(self.s_band.lo, self.s_band.hi, grid[0])
        pe = np.linspace(self.pe_lo, self.pe_hi, grid[1])
        dens, _ = self._density(s[:, None], pe[None, :])
        self.bound = ENVELOPE_SAFETY * float(dens.max()) if dens.size else 0.0

    def _density(self, lam_s, lam_pe):
        with np.errstate(divide="ignore", invalid="ignore"):
            dens, lam_i = ridge_density(lam_s, lam_pe, self.pump, self.src)
        inside = (lam_i >= self.i_band.lo) & (lam_i <= self.i_band.hi) & (lam_pe < lam_s)
        return np.where(inside, dens, 0.0), lam_i

    def sample(self, rng: np.random.Generator, n: int):
        if n == 0:
            return np.zeros(0), np.zeros(0)
        if self.bound <= 0:
            raise EnvelopeError("filtered JSI vanishes on the sampling grid")
        out_s, out_i = [], []
        have = 0
        batch = max(1024, 4 * n)
        while have < n:
            cs = rng.uniform(self.s_band.lo, self.s_band.hi, batch)
            cpe = rng.uniform(self.pe_lo, self.pe_hi, batch)
            u = rng.uniform(0.0, self.bound, batch)
            dens, lam_i = self._density(cs, cpe)
            if np.any(dens > self.bound):
                raise EnvelopeError(
                    f"JSI value {dens.max():.4g} exceeds the rejection envelope {self.bound:.4g}")
            acc = u < dens
            out_s.append(cs[acc])
            out_i.append(lam_i[acc])
            have += int(acc.sum())
            rate = max(acc.mean(), 1e-4)
            batch = int(min(5_000_000, max(1024, 1.2 * (n - have) / rate)))
        return np.concatenate(out_s)[:n], np.concatenate(out_i)[:n]


def _arrival(lam, chain, offset, dispersion, period, z_sync, z_pulse, rng):
    t = (offset + group_delay(lam, dispersion) + chain.sigma_sync * z_sync
         + chain.sigma_pulse * z_pulse + chain.sigma_det * rng.standard_normal(lam.size))
    t = np.floor(np.mod(t, period))
    t[t >= period] = 0.0
    return t.astype(np.uint32)


def _simulate_block(config: RunConfig, sampler: RidgeSampler, mean_pairs: float,
                    start: int, size: int, seed: np.random.SeedSequence):
    rng = np.random.default_rng(seed)
    period = config.period_ps
    cs, ci = config.signal_chain, config.idler_chain
    n_pairs = int(rng.poisson(mean_pairs * size))
    pulse = np.sort(start + rng.integers(0, size, n_pairs, dtype=np.int64))
    eff_s = rng.random(n_pairs) < cs.efficiency
    eff_i = rng.random(n_pairs) < ci.efficiency
    keep = eff_s | eff_i
    pulse, eff_s, eff_i = pulse[keep], eff_s[keep], eff_i[keep]
    lam_s, lam_i = sampler.sample(rng, pulse.size)
    det_s = eff_s & (rng.random(pulse.size) < config.filters.signal.transmission(lam_s))
    det_i = eff_i & (rng.random(pulse.size) < config.filters.idler.transmission(lam_i))
    # sync jitter is common to the whole pulse, pump-pulse jitter common to the pair
    _, inv = np.unique(pulse, return_inverse=True)
    z_sync = rng.standard_normal(inv.max() + 1 if inv.size else 0)[inv]
    z_pulse = rng.standard_normal(pulse.size)
    t_s = _arrival(lam_s, cs, config.signal_offset_ps, config.dispersion, period,
                   z_sync, z_pulse, rng)
    t_i = _arrival(lam_i, ci, config.idler_offset_ps, config.dispersion, period,
                   z_sync, z_pulse, rng)

    chans, pulses, times = [], [], []
    for ch, det, t in ((SIGNAL, det_s, t_s), (IDLER, det_i, t_i)):
        chans.append(np.full(int(det.sum()), ch, dtype=np.uint8))
        pulses.append(pulse[det])
        times.append(t[det])
    block_seconds = size * period * 1e-12
    for ch, chain in ((SIGNAL, cs), (IDLER, ci)):
        n_dark = int(rng.poisson(chain.dark_rate * block_seconds))
        chans.append(np.full(n_dark, ch, dtype=np.uint8))
        pulses.append(start + rng.integers(0, size, n_dark, dtype=np.int64))
        times.append(rng.integers(0, period, n_dark).astype(np.uint32))
    stats = {"pairs": n_pairs, "photons": int(det_s.sum() + det_i.sum())}
    return np.concatenate(chans), np.concatenate(pulses), np.concatenate(times), stats


def apply_dead_time(channel, abs_time, dead_time, channels=(SIGNAL, IDLER)):
    """Mask of detections that survive a non-paralyzable dead time.

    ``abs_time`` must be sorted. An event whose gap to the previous event on
    its channel is at least ``dead_time`` always survives, so only the rare
    short-gap events need the sequential pass.
    """
    keep = np.ones(channel.size, dtype=bool)
    for ch, dt in zip(channels, dead_time):
        if dt <= 0:
            continue
        idx = np.flatnonzero(channel == ch)
        t = abs_time[idx]
        if t.size < 2:
            continue
        short = np.flatnonzero(np.diff(t) < dt) + 1
        last_kept = None
        prev = -2
        for j in short.tolist():
            if j - 1 != prev:
                # previous event had a long gap (or is first) and was therefore kept
                last_kept = t[j - 1]
            if t[j] - last_kept < dt:
                keep[idx[j]] = False
            else:
                last_kept = t[j]
            prev = j
    return keep


def sample_pairs(config: RunConfig, workers: int = 1, return_stats: bool = False):
    """Simulate a run and return its detected-photon ``EventStream``."""
    mean_pairs = filtered_mean_pairs(config)
    if mean_pairs > MAX_MEAN_PAIRS:
        raise ValidationError(
            f"filtered mean of {mean_pairs:.3g} pairs/pulse exceeds {MAX_MEAN_PAIRS}; "
            "multi-pair emission would dominate")
    if config.filters.overlapping:
        log.warning("signal and idler filter bands overlap (%s); pairs are routed by "
                    "polarisation, not wavelength", config.filters.label)
    sampler = RidgeSampler(config)
    n_pulses = config.n_pulses
    block = int(min(max(_PAIRS_PER_BLOCK / max(mean_pairs, 1e-12), 1 << 16), 1 << 40))
    starts = list(range(0, n_pulses, block))
    seeds = np.random.SeedSequence(config.rng_seed).spawn(len(starts))
    jobs = [(s, min(block, n_pulses - s), sd) for s, sd in zip(starts, seeds)]

    def run(job):
        return _simulate_block(config, sampler, mean_pairs, *job)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]

    digest = config.digest()
    period = config.period_ps
    if parts:
        channel = np.concatenate([p[0] for p in parts])
        pulse = np.concatenate([p[1] for p in parts])
        time = np.concatenate([p[2] for p in parts])
    else:
        channel = pulse = time = np.zeros(0, dtype=np.int64)
    stream = EventStream(channel, pulse, time, period, config.bin_hint_ps, digest).sorted()
    abs_t = stream.pulse_index.astype(np.int64) * period + stream.time_ps.astype(np.int64)
    keep = apply_dead_time(stream.channel, abs_t,
                           (config.signal_chain.dead_time, config.idler_chain.dead_time))
    stream = stream.select(keep)
    if not return_stats:
        return stream
    stats = {
        "mean_pairs_per_pulse": mean_pairs,
        "pulses": n_pulses,
        "pairs_generated": sum(p[3]["pairs"] for p in parts),
        "photons_detected": sum(p[3]["photons"] for p in parts),
        "dead_time_losses": int((~keep).sum()),
        "events": len(stream),
    }
    return stream, stats
