"""End-to-end campaign: simulate, histogram, calibrate, invert, stitch.

A campaign is a list of runs (filter set, pump detuning, duration, seed) that
share one spool and one set of detector chains. All files go into one
directory, described by a manifest.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import calibrate as cal
from . import config as cfgmod
from . import histogram as hist
from . import invert as inv
from .dispersion import TimeAxis, time_width
from .errors import EdgeDetectionError, FormatError, ValidationError
from .events import read_events, write_events
from .simulate import RunConfig, sample_pairs
from .spdc import resolution_floor

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MIN_CALIBRATION_COINCIDENCES = 10_000


class DigestMismatchError(ValidationError):
    pass


@dataclass
class RunDescriptor:
    label: str
    detuning: float
    duration: float
    seed: int
    events: str = ""
    histogram: str = ""
    edges: str = ""
    spectrum: str = ""
    digest: str = ""

    @property
    def key(self):
        return (self.label, round(self.detuning, 9))

    @property
    def stem(self) -> str:
        return f"{self.label}_{self.detuning:+.3f}".replace("+", "p").replace("-", "m")


@dataclass
class WorkspaceManifest:
    config: dict
    runs: list = field(default_factory=list)
    calibration: str = ""
    fit: str = ""
    curve: str = ""
    directory: str = "."

    def __post_init__(self):
        keys = [r.key for r in self.runs]
        if len(set(keys)) != len(keys):
            raise ValidationError("manifest runs must be unique by (filter, detuning)")

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def run_config(self, run: RunDescriptor) -> RunConfig:
        return cfgmod.build_run_config(run_cfg(self.config, run))

    def save(self) -> str:
        data = {
            "config": self.config,
            "runs": [r.__dict__ for r in self.runs],
            "calibration": self.calibration,
            "fit": self.fit,
            "curve": self.curve,
        }
        p = self.path(MANIFEST_NAME)
        with open(p, "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return p

    @classmethod
    def load(cls, path) -> "WorkspaceManifest":
        if os.path.isdir(path):
            path = os.path.join(path, MANIFEST_NAME)
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read manifest {path}: {exc}") from None
        m = cls(config=cfgmod.merge(cfgmod.default_config(), data["config"]),
                runs=[RunDescriptor(**r) for r in data.get("runs", [])],
                calibration=data.get("calibration", ""), fit=data.get("fit", ""),
                curve=data.get("curve", ""), directory=os.path.dirname(os.path.abspath(path)))
        for r in m.runs:
            for f in (r.events, r.histogram):
                if f and not os.path.exists(m.path(f)):
                    raise FormatError(f"manifest references missing file {f}")
        return m


def run_cfg(base: dict, run: RunDescriptor) -> dict:
    c = cfgmod.set_dotted(base, "filters.label", run.label)
    c = cfgmod.set_dotted(c, "pump.detuning_nm", float(run.detuning))
    c = cfgmod.set_dotted(c, "run.duration_s", float(run.duration))
    return cfgmod.set_dotted(c, "run.rng_seed", int(run.seed))


def check_digest(found: str, expected: str, what: str, force: bool = False) -> None:
    if expected and found and found != expected:
        msg = f"{what}: config digest {found[:12]} does not match the expected {expected[:12]}"
        if not force:
            raise DigestMismatchError(msg + " (use --force to override)")
        log.warning(msg)


def histogram_run(stream, rc: RunConfig, bin_width: float = 64.0):
    """Histogram a run and detect both arms' edges (None where detection fails)."""
    axis = TimeAxis(rc.period_ps, bin_width)
    md = {"filters": rc.filters.label, "detuning_nm": rc.pump.detuning,
          "lambda_p_nm": rc.pump.lambda_p}
    lf = hist.live_fraction(stream, (rc.signal_chain.dead_time, rc.idler_chain.dead_time),
                            rc.n_pulses)
    md["live_fraction"] = lf["both"]
    h = hist.accumulate(stream, axis, rc.duration, md)
    edges = {}
    for arm in ("signal", "idler"):
        try:
            edges[arm] = hist.detect_edges(hist.marginal(h, arm))
        except EdgeDetectionError as exc:
            log.info("%s %+.3f %s: %s", rc.filters.label, rc.pump.detuning, arm, exc)
            edges[arm] = None
    return h, edges


def calibration_points(rc: RunConfig, h, edges, sigma: float | None = None,
                       min_coincidences: int = MIN_CALIBRATION_COINCIDENCES):
    if h.total < min_coincidences:
        return []
    sigma = sigma or resolution_floor(rc.signal_chain)
    bands = dict(zip(("signal", "idler"), inv.run_bands(rc.filters, rc.pump)))
    tag = f"{rc.filters.label}:{rc.pump.detuning:+.3f}"
    return [cal.CalibrationPoint(bands[arm], edges[arm].width, sigma, f"{tag}:{arm}")
            for arm in ("signal", "idler") if edges[arm] is not None and edges[arm].width > 0]


def default_losses(rc: RunConfig):
    """Flat loss tables from the configured efficiencies and filter insertion loss."""
    out = []
    for chain, filt in ((rc.signal_chain, rc.filters.signal), (rc.idler_chain, rc.filters.idler)):
        out.append(inv.LossTable.flat(-10.0 * np.log10(chain.efficiency) + filt.insertion_loss))
    return tuple(out)


def choose_anchors(items, model, dt_min):
    """Anchor every run; runs whose own edges fail borrow from the best-anchored run.

    ``items`` is a list of (rc, h, edges). Own edges are accepted only if both
    were found and both widths agree with the calibrated model within 2 dt_min.
    """
    own = {}
    for k, (rc, h, edges) in enumerate(items):
        if edges["signal"] is None or edges["idler"] is None:
            continue
        bands = inv.run_bands(rc.filters, rc.pump)
        if all(abs(edges[a].width - time_width(b, model)) <= 2 * dt_min
               for a, b in zip(("signal", "idler"), bands)):
            own[k] = inv.anchor_from_edges(edges, rc.filters, rc.pump, model, dt_min)
    if not own:
        raise EdgeDetectionError("no run in the campaign has usable edges to anchor on")
    ref = max(own, key=lambda k: (items[k][1].total, -k))
    anchors = []
    for k, (rc, h, edges) in enumerate(items):
        if k in own:
            anchors.append(own[k])
        else:
            rrc = items[ref][0]
            anchors.append(inv.predicted_anchor(rc.filters, rc.pump, model, own[ref],
                                                rrc.pump, rrc.filters))
    return anchors


def run_campaign(base_cfg: dict, runs, out_dir: str, pin=("length", None), bin_width=64.0,
                 workers: int = 1, step_nm: float = 0.5, keep_events: bool = True):
    """Full pipeline; writes every artifact into ``out_dir`` and returns the manifest.

    ``pin`` splits kappa for the reported spool parameters; a None value takes
    the configured spool length.
    """
    os.makedirs(out_dir, exist_ok=True)
    runs = [r if isinstance(r, RunDescriptor) else RunDescriptor(*r) for r in runs]
    man = WorkspaceManifest(config=base_cfg, runs=runs, directory=out_dir)
    items, points = [], []
    for r in runs:
        rc = man.run_config(r)
        stream = sample_pairs(rc, workers=workers)
        r.digest = stream.config_digest.hex()
        if keep_events:
            r.events = f"{r.stem}.bfse"
            write_events(stream, man.path(r.events))
        h, edges = histogram_run(stream, rc, bin_width)
        del stream
        r.histogram = f"{r.stem}.hist"
        hist.write_histogram(h, man.path(r.histogram))
        found = {a: e for a, e in edges.items() if e is not None}
        if found:
            r.edges = f"{r.stem}.edges"
            hist.write_edges(found, man.path(r.edges))
        points.extend(calibration_points(rc, h, edges))
        items.append((rc, h, edges))

    man.calibration = "calibration.txt"
    cal.write_calibration_table(points, man.path(man.calibration))
    name, value = pin
    if value is None:
        value = base_cfg["dispersion"]["length_km" if name == "length" else "s0_ps_nm2_km"]
    fr = cal.fit(points, pin=(name, value))
    man.fit = "fit.txt"
    cal.write_fit(fr, man.path(man.fit))
    model = cal.dispersion_from_fit(fr)

    dt_min = resolution_floor(items[0][0].signal_chain)
    anchors = choose_anchors(items, model, dt_min)
    spectra = []
    for r, (rc, h, _), anc in zip(runs, items, anchors):
        g = inv.invert_histogram(h, model, anc, dt_min, check=False,
                                 metadata={"filters": rc.filters.label,
                                           "detuning_nm": rc.pump.detuning,
                                           "fit_kappa_ps_nm2": fr.kappa})
        g = inv.correct_spectrum(g, default_losses(rc), rc.pump.power)
        r.spectrum = f"{r.stem}.spec"
        inv.write_spectrum(g, man.path(r.spectrum))
        spectra.append((g, rc.pump))
    curve = inv.stitch(spectra, step=step_nm)
    man.curve = "tuning_curve.txt"
    inv.write_tuning_curve(curve, man.path(man.curve))
    man.save()
    return man, fr, curve
