"""Command-line interface: ``bfspec <command> ...``.

Units: wavelengths in nm, times in ps, durations in s, pump power in mW,
losses in dB, dispersion slope in ps/(nm^2 km), spool length in km.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 file I/O.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import calibrate as cal
from . import config as cfgmod
from . import histogram as hist
from . import invert as inv
from . import workflow as wf
from .errors import EdgeDetectionError, FiberSpecError, FormatError, ValidationError
from .events import read_events, read_events_csv, write_events, write_events_csv
from .simulate import sample_pairs
from .spdc import resolution_floor

log = logging.getLogger("fiberspec")

UNITS_EPILOG = ("units: wavelengths nm, times ps, durations s, pump power mW, losses dB, "
                "S0 ps/(nm^2 km), length km. Config keys carry their unit suffix; "
                "environment overrides use BFS_<SECTION>__<KEY>.")


# ---------------------------------------------------------------- helpers

def _config_args(p):
    p.add_argument("--config", action="append", default=[], metavar="YAML",
                   help="config file (repeatable; later files win)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (value parsed as YAML)")
    p.add_argument("--filter", dest="filter_label", help="filter set: alpha, beta, gamma, delta")
    p.add_argument("--detuning", type=float, help="pump detuning from lambda_p0, nm")
    p.add_argument("--duration", type=float, help="integration time, s")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--power", type=float, help="pump power, mW")


def _load_cfg(args) -> dict:
    import yaml

    overrides = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep or "." not in key:
            raise ValidationError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key] = yaml.safe_load(val)
    for attr, key in (("filter_label", "filters.label"), ("detuning", "pump.detuning_nm"),
                      ("duration", "run.duration_s"), ("seed", "run.rng_seed"),
                      ("power", "pump.power_mw")):
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    return cfgmod.load_config(args.config, overrides=overrides)


def _parse_pin(items):
    if not items:
        return None
    if len(items) > 1:
        raise ValidationError("pin either length or s0, not both")
    name, sep, val = items[0].partition("=")
    if not sep:
        raise ValidationError(f"--pin expects NAME=VALUE, got {items[0]!r}")
    try:
        return name.strip(), float(val)
    except ValueError:
        raise ValidationError(f"--pin value {val!r} is not a number") from None


def _read_any_events(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_events(path) if head == b"BFSE" else read_events_csv(path)


def _kind(path) -> str:
    try:
        with open(path, "rb") as fh:
            first = fh.readline().decode(errors="replace").strip()
    except OSError as exc:
        raise FormatError(f"cannot open {path}: {exc}") from None
    if first.startswith("# fiberspec "):
        return first[len("# fiberspec "):].rsplit(" ", 1)[0]
    raise FormatError(f"{path} is not a fiberspec artifact")


# ---------------------------------------------------------------- commands

def cmd_config_show(args):
    cfg = _load_cfg(args)
    sys.stdout.write(cfgmod.dump_config(cfg))
    sys.stdout.write(f"# digest {cfgmod.config_digest(cfg).hex()}\n")
    return 0


def cmd_simulate(args):
    cfg = _load_cfg(args)
    rc = cfgmod.build_run_config(cfg)
    stream, stats = sample_pairs(rc, workers=args.workers, return_stats=True)
    if args.format == "csv":
        write_events_csv(stream, args.out)
    else:
        write_events(stream, args.out)
    n_sig = int(np.sum(stream.channel == 0))
    print(f"pairs generated   {stats['pairs_generated']}")
    print(f"photons detected  {stats['photons_detected']}")
    print(f"dead-time losses  {stats['dead_time_losses']}")
    print(f"events written    {stats['events']}")
    print(f"signal rate       {n_sig / rc.duration:.1f} /s")
    print(f"idler rate        {(stats['events'] - n_sig) / rc.duration:.1f} /s")
    print(f"config digest     {stream.config_digest.hex()}")
    return 0


def cmd_histogram(args):
    cfg = _load_cfg(args)
    rc = cfgmod.build_run_config(cfg)
    stream = _read_any_events(args.events)
    wf.check_digest(stream.config_digest.hex(), rc.digest().hex(), args.events, args.force)
    h, edges = wf.histogram_run(stream, rc, args.bin_ps)
    prefix = args.out
    hist.write_histogram(h, prefix + ".hist")
    for arm in ("signal", "idler"):
        hist.write_marginal(hist.marginal(h, arm), f"{prefix}.{arm}.marg")
    found = {a: e for a, e in edges.items() if e is not None}
    if found:
        hist.write_edges(found, prefix + ".edges")
    for arm in ("signal", "idler"):
        e = edges[arm]
        if e is None:
            print(f"{arm:6s}  no edges found")
        else:
            print(f"{arm:6s}  rising {e.rising:.1f} ps  falling {e.falling:.1f} ps  "
                  f"width {e.width:.1f} ps")
    print(f"coincidences {h.total}")
    if args.table:
        pts = wf.calibration_points(rc, h, edges, min_coincidences=args.min_coincidences)
        cal.write_calibration_table(pts, args.table, append=True)
        print(f"appended {len(pts)} calibration rows to {args.table}")
    if len(found) < 2 and args.strict:
        raise EdgeDetectionError("edge detection failed on at least one arm")
    return 0


def cmd_calibrate(args):
    points = cal.read_calibration_table(args.table)
    fr = cal.fit(points, pin=_parse_pin(args.pin))
    cal.write_fit(fr, args.out)
    print(f"kappa   = {fr.kappa:.6g} +- {fr.kappa_err:.2g} ps/nm^2")
    print(f"lambda0 = {fr.lambda0:.4f} +- {fr.lambda0_err:.2g} nm")
    if fr.pin:
        other = "s0" if fr.pin[0] == "length" else "length"
        print(f"{other} = {getattr(fr, other):.6g} +- {fr.derived_err:.2g}")
    print(f"chi2/dof = {fr.chi2:.3f}/{fr.dof}")
    return 0


def _model_from_fit(fr, pin_items, cfg):
    pin = _parse_pin(pin_items) or fr.pin or ("length", cfg["dispersion"]["length_km"])
    return cal.dispersion_from_fit(fr, pin)


def _losses(args, rc):
    s_loss, i_loss = wf.default_losses(rc)
    if args.losses_signal:
        s_loss = inv.read_loss_table(args.losses_signal)
    if args.losses_idler:
        i_loss = inv.read_loss_table(args.losses_idler)
    return s_loss, i_loss


def cmd_invert(args):
    cfg = _load_cfg(args)
    rc = cfgmod.build_run_config(cfg)
    h = hist.read_histogram(args.histogram)
    wf.check_digest(h.metadata.get("config_digest", ""), rc.digest().hex(), args.histogram,
                    args.force)
    fr = cal.read_fit(args.fit)
    model = _model_from_fit(fr, args.pin, cfg)
    dt_min = resolution_floor(rc.signal_chain)
    if args.edges:
        edges = hist.read_edges(args.edges)
    else:
        edges = {a: hist.detect_edges(hist.marginal(h, a)) for a in ("signal", "idler")}
    anchor = inv.anchor_from_edges(edges, rc.filters, rc.pump, model, dt_min)
    g = inv.invert_histogram(h, model, anchor, dt_min,
                             metadata={"filters": rc.filters.label,
                                       "detuning_nm": rc.pump.detuning})
    if not args.raw:
        g = inv.correct_spectrum(g, _losses(args, rc), rc.pump.power)
    inv.write_spectrum(g, args.out)
    print(f"wrote {g.normalization} spectrum {g.values.shape[0]}x{g.values.shape[1]} "
          f"({g.total():.4g} pairs per pulse)")
    return 0


def cmd_tuning_curve(args):
    man = wf.WorkspaceManifest.load(args.manifest)
    if not man.fit:
        raise ValidationError("manifest has no fit; run calibrate first")
    fr = cal.read_fit(man.path(man.fit))
    model = _model_from_fit(fr, args.pin, man.config)
    items = []
    for r in man.runs:
        rc = man.run_config(r)
        h = hist.read_histogram(man.path(r.histogram))
        wf.check_digest(h.metadata.get("config_digest", ""), r.digest, r.histogram, args.force)
        edges = {"signal": None, "idler": None}
        if r.edges:
            edges.update(hist.read_edges(man.path(r.edges)))
        items.append((rc, h, edges))
    dt_min = resolution_floor(items[0][0].signal_chain)
    anchors = wf.choose_anchors(items, model, dt_min)
    spectra = []
    for (rc, h, _), anc in zip(items, anchors):
        g = inv.invert_histogram(h, model, anc, dt_min, check=False,
                                 metadata={"filters": rc.filters.label,
                                           "detuning_nm": rc.pump.detuning})
        spectra.append((inv.correct_spectrum(g, wf.default_losses(rc), rc.pump.power), rc.pump))
    curve = inv.stitch(spectra, step=args.step_nm)
    inv.write_tuning_curve(curve, args.out)
    print(f"tuning curve: {curve.detuning_axis.size} detunings x "
          f"{curve.wavelength_axis.size} wavelengths, span {curve.span():.1f} nm")
    return 0


def _float_list(text):
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        n = int(round((hi - lo) / step))
        return [round(lo + k * step, 9) for k in range(n + 1)]
    return [float(v) for v in text.split(",") if v]


def cmd_campaign(args):
    cfg = _load_cfg(args)
    labels = [s for s in args.filters.split(",") if s]
    dets = _float_list(args.detunings)
    seed0 = cfg["run"]["rng_seed"]
    dur = cfg["run"]["duration_s"]
    runs, k = [], 0
    for lab in labels:
        for d in dets:
            runs.append(wf.RunDescriptor(lab, d, dur, seed0 + k))
            k += 1
    pin = _parse_pin(args.pin) or ("length", None)
    man, fr, curve = wf.run_campaign(cfg, runs, args.out, pin=pin, bin_width=args.bin_ps,
                                     workers=args.workers, step_nm=args.step_nm,
                                     keep_events=not args.no_events)
    print(f"{len(runs)} runs, {len(fr.points)} calibration points")
    print(f"kappa = {fr.kappa:.6g} ps/nm^2, lambda0 = {fr.lambda0:.3f} nm, "
          f"chi2/dof = {fr.reduced_chi2:.3f}")
    print(f"tuning curve span {curve.span():.1f} nm -> {man.path(man.curve)}")
    return 0


# ---------------------------------------------------------------- export

def _export_rows(path):
    kind = _kind(path)
    if kind == "tuning-curve":
        tc = inv.read_tuning_curve(path)
        d, w = np.meshgrid(tc.detuning_axis, tc.wavelength_axis)
        mask = (tc.gaps | tc.conflicts).astype(int)
        vals = np.where(mask == 1, np.nan, tc.values)
        return (["detuning_nm", "wavelength_nm", "value", "mask"],
                np.column_stack([d.ravel(), w.ravel(), vals.ravel(), mask.ravel()]), kind)
    if kind == "marginal":
        m = hist.read_marginal(path)
        return ["t_ps", "counts"], np.column_stack([m.axis.bin_edges()[:-1], m.counts]), kind
    if kind == "fit":
        fr = cal.read_fit(path)
        pred = fr.predictions()
        meas = np.array([p.delta_tau for p in fr.points])
        sig = np.array([p.sigma for p in fr.points])
        rows = np.column_stack([[p.band.lo for p in fr.points], [p.band.hi for p in fr.points],
                                meas, sig, pred, meas - pred])
        return (["lambda1_nm", "lambda2_nm", "measured_ps", "sigma_ps", "predicted_ps",
                 "residual_ps"], rows, kind)
    if kind == "spectrum":
        g = inv.read_spectrum(path)
        s, i = np.meshgrid(g.lambda_s_axis, g.lambda_i_axis, indexing="ij")
        return (["lambda_s_nm", "lambda_i_nm", "value"],
                np.column_stack([s.ravel(), i.ravel(), g.values.ravel()]), kind)
    if kind == "histogram2d":
        h = hist.read_histogram(path)
        t = h.axis.bin_edges()[:-1]
        s, i = np.meshgrid(t, t, indexing="ij")
        return ["t_s_ps", "t_i_ps", "counts"], np.column_stack([s.ravel(), i.ravel(),
                                                                h.counts.ravel()]), kind
    raise FormatError(f"no plot export for {kind!r} files")


_GNUPLOT = {
    "tuning-curve": "set xlabel 'pump detuning (nm)'\nset ylabel 'wavelength (nm)'\n"
                    "set view map\nsplot '{data}' using 1:2:3 with image notitle\n",
    "marginal": "set xlabel 't (ps)'\nset ylabel 'counts'\n"
                "plot '{data}' using 1:2 with steps notitle\n",
    "fit": "set xlabel 'measured delta tau (ps)'\nset ylabel 'predicted delta tau (ps)'\n"
           "plot '{data}' using 3:5:4 with xerrorbars title 'points', x title 'ideal'\n",
    "spectrum": "set xlabel 'signal (nm)'\nset ylabel 'idler (nm)'\nset view map\n"
                "splot '{data}' using 1:2:3 with points palette pt 5 ps 0.3 notitle\n",
    "histogram2d": "set xlabel 't_s (ps)'\nset ylabel 't_i (ps)'\nset view map\n"
                   "splot '{data}' using 1:2:3 with image notitle\n",
}


def cmd_export_plot(args):
    cols, rows, kind = _export_rows(args.artifact)
    base = args.out or os.path.splitext(args.artifact)[0]
    if args.format == "csv":
        path = base + ".csv"
        np.savetxt(path, rows, delimiter=",", header=",".join(cols), comments="", fmt="%.10g")
    else:
        data = base + ".dat"
        np.savetxt(data, rows, header=" ".join(cols), fmt="%.10g")
        path = base + ".gp"
        with open(path, "w") as fh:
            fh.write(f"# {kind} from {os.path.basename(args.artifact)}\n")
            fh.write(_GNUPLOT[kind].format(data=os.path.basename(data)))
    print(path)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bfspec", description=__doc__.splitlines()[0],
                                 epilog=UNITS_EPILOG)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="configuration utilities", epilog=UNITS_EPILOG)
    csub = p.add_subparsers(dest="config_command", required=True)
    ps = csub.add_parser("show", help="print the merged configuration, defaults included")
    _config_args(ps)
    ps.set_defaults(func=cmd_config_show)

    p = sub.add_parser("simulate", help="simulate one run into an event file",
                       epilog=UNITS_EPILOG)
    _config_args(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("histogram", help="coincidence histogram, marginals and edge report",
                       epilog=UNITS_EPILOG)
    p.add_argument("events")
    _config_args(p)
    p.add_argument("--bin-ps", type=float, default=64.0, help="bin width, ps")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--table", help="calibration table to append the edge widths to")
    p.add_argument("--min-coincidences", type=int, default=wf.MIN_CALIBRATION_COINCIDENCES)
    p.add_argument("--strict", action="store_true", help="fail if an edge is not found")
    p.add_argument("--force", action="store_true", help="ignore config digest mismatches")
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("calibrate", help="fit kappa = L*S0 and lambda0 to a calibration table",
                       epilog=UNITS_EPILOG)
    p.add_argument("table")
    p.add_argument("--pin", action="append", default=[], metavar="length=KM|s0=PS_NM2_KM")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("invert", help="histogram to spectral brightness", epilog=UNITS_EPILOG)
    p.add_argument("histogram")
    p.add_argument("fit")
    _config_args(p)
    p.add_argument("--edges", help="edge report from the histogram stage")
    p.add_argument("--losses-signal", help="two-column table: wavelength_nm loss_db")
    p.add_argument("--losses-idler", help="two-column table: wavelength_nm loss_db")
    p.add_argument("--pin", action="append", default=[])
    p.add_argument("--raw", action="store_true", help="skip loss/power correction")
    p.add_argument("--force", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("tuning-curve", help="invert and stitch every run of a manifest",
                       epilog=UNITS_EPILOG)
    p.add_argument("manifest")
    p.add_argument("--pin", action="append", default=[])
    p.add_argument("--step-nm", type=float, default=0.5)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tuning_curve)

    p = sub.add_parser("campaign", help="simulate, histogram, calibrate, invert and stitch",
                       epilog=UNITS_EPILOG)
    _config_args(p)
    p.add_argument("--filters", default="alpha,beta,gamma,delta")
    p.add_argument("--detunings", default="-0.5:0.5:0.1", help="LO:HI:STEP or comma list, nm")
    p.add_argument("--pin", action="append", default=[])
    p.add_argument("--bin-ps", type=float, default=64.0)
    p.add_argument("--step-nm", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-events", action="store_true", help="do not keep event files")
    p.add_argument("--out", required=True, help="workspace directory")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("export-plot", help="plot-ready data from an artifact file",
                       epilog=UNITS_EPILOG)
    p.add_argument("artifact")
    p.add_argument("--format", choices=("csv", "gnuplot-script"), default="csv")
    p.add_argument("--out", help="output base name (default: next to the artifact)")
    p.set_defaults(func=cmd_export_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except FiberSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
