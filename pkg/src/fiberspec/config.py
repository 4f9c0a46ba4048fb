"""Layered run configuration.

Layers, lowest precedence first: built-in defaults, YAML file(s), environment
variables ``BFS_<SECTION>__<KEY>`` (e.g. ``BFS_DISPERSION__LENGTH_KM=20``),
explicit overrides. Keys carry their unit in the name.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os

import yaml

from .dispersion import DispersionModel, WavelengthBand
from .errors import ValidationError
from .instrument import (DEFAULT_EDGE_SLOPE_DB_PER_NM, FILTER_BANDS, DetectorChain,
                         FilterPair, TopHatFilter, edge_scale_from_slope)
from .spdc import PumpSetting, SourceModel

ENV_PREFIX = "BFS_"


def default_config() -> dict:
    chain = DetectorChain().to_config()
    return {
        "source": SourceModel().to_config(),
        "pump": {"detuning_nm": 0.0, "power_mw": 1.0},
        "filters": {
            "label": "beta",
            "signal_lo_nm": None,
            "signal_hi_nm": None,
            "idler_lo_nm": None,
            "idler_hi_nm": None,
            "edge_slope_db_per_nm": DEFAULT_EDGE_SLOPE_DB_PER_NM,
            "insertion_loss_db": 0.0,
        },
        "dispersion": {"s0_ps_nm2_km": 0.0885, "lambda0_nm": 1320.0, "length_km": 20.56},
        "signal_chain": dict(chain),
        "idler_chain": dict(chain),
        "run": {
            "duration_s": 500.0,
            "sync_rate_hz": 40.8e6,
            "rng_seed": 0,
            "signal_offset_ps": 0.0,
            "idler_offset_ps": 0.0,
            "bin_hint_ps": 64,
        },
    }


def _coerce(old, text, path):
    if isinstance(old, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(old, int):
        try:
            return int(text)
        except ValueError:
            raise ValidationError(f"{path}: expected an integer, got {text!r}") from None
    if isinstance(old, float) or old is None:
        try:
            return float(text)
        except ValueError:
            if old is None:
                return text
            raise ValidationError(f"{path}: expected a number, got {text!r}") from None
    return text


def merge(base: dict, layer: dict, prefix="") -> dict:
    out = copy.deepcopy(base)
    for key, val in (layer or {}).items():
        path = f"{prefix}{key}"
        if key not in out:
            raise ValidationError(f"unknown config key {path!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ValidationError(f"{path}: expected a section")
            out[key] = merge(out[key], val, path + ".")
        else:
            out[key] = val
    return out


def env_layer(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    layer: dict = {}
    defaults = default_config()
    for name, text in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        if len(parts) != 2:
            raise ValidationError(f"{name}: expected {ENV_PREFIX}<SECTION>__<KEY>")
        sec, key = parts
        if sec not in defaults or key not in defaults[sec]:
            raise ValidationError(f"{name}: unknown config key {sec}.{key}")
        layer.setdefault(sec, {})[key] = _coerce(defaults[sec][key], text, f"{sec}.{key}")
    return layer


def set_dotted(cfg: dict, dotted: str, value) -> dict:
    sec, _, key = dotted.partition(".")
    return merge(cfg, {sec: {key: value}})


def load_config(paths=(), environ=None, overrides=None) -> dict:
    cfg = default_config()
    for p in paths:
        if p is None:
            continue
        try:
            with open(p) as fh:
                layer = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ValidationError(f"cannot read config {p}: {exc}") from None
        cfg = merge(cfg, layer)
    cfg = merge(cfg, env_layer(environ))
    for dotted, value in (overrides or {}).items():
        cfg = set_dotted(cfg, dotted, value)
    return cfg


def flatten(cfg: dict) -> dict:
    return {f"{sec}.{k}": v for sec, body in cfg.items() for k, v in body.items()}


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)


def config_digest(cfg: dict) -> bytes:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).digest()


def _filters_from(d: dict) -> FilterPair:
    label = d["label"]
    bands = {k: d[k] for k in ("signal_lo_nm", "signal_hi_nm", "idler_lo_nm", "idler_hi_nm")}
    if label in FILTER_BANDS:
        (slo, shi), (ilo, ihi) = FILTER_BANDS[label]
        std = {"signal_lo_nm": slo, "signal_hi_nm": shi, "idler_lo_nm": ilo, "idler_hi_nm": ihi}
        bands = {k: std[k] if v is None else v for k, v in bands.items()}
    missing = [k for k, v in bands.items() if v is None]
    if missing:
        raise ValidationError(f"filters.{missing[0]} required for custom filter set {label!r}")
    slope = float(d["edge_slope_db_per_nm"])
    if slope <= 0:
        raise ValidationError("filters.edge_slope_db_per_nm must be positive")
    scale = 0.0 if slope == float("inf") else edge_scale_from_slope(slope)
    loss = float(d["insertion_loss_db"])
    return FilterPair(
        TopHatFilter(WavelengthBand(float(bands["signal_lo_nm"]), float(bands["signal_hi_nm"])),
                     scale, loss),
        TopHatFilter(WavelengthBand(float(bands["idler_lo_nm"]), float(bands["idler_hi_nm"])),
                     scale, loss),
        label,
    )


def _section(cfg, name, builder):
    try:
        return builder(cfg[name])
    except ValidationError as exc:
        msg = str(exc)
        raise ValidationError(msg if msg.startswith(name) else f"{name}: {msg}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: {exc}") from None


def build_run_config(cfg: dict):
    from .simulate import RunConfig

    src = _section(cfg, "source", SourceModel.from_config)
    pump = _section(cfg, "pump", lambda d: PumpSetting.from_detuning(
        float(d["detuning_nm"]), src, float(d["power_mw"])))
    filters = _section(cfg, "filters", _filters_from)
    disp = _section(cfg, "dispersion", DispersionModel.from_config)
    sch = _section(cfg, "signal_chain", DetectorChain.from_config)
    ich = _section(cfg, "idler_chain", DetectorChain.from_config)
    run = cfg["run"]
    try:
        return RunConfig(
            source=src, pump=pump, filters=filters, dispersion=disp,
            signal_chain=sch, idler_chain=ich,
            duration=float(run["duration_s"]), sync_rate=float(run["sync_rate_hz"]),
            rng_seed=int(run["rng_seed"]),
            signal_offset_ps=float(run["signal_offset_ps"]),
            idler_offset_ps=float(run["idler_offset_ps"]),
            bin_hint_ps=int(run["bin_hint_ps"]),
        )
    except ValidationError as exc:
        raise ValidationError(f"run: {exc}") from None


def run_config_to_dict(rc) -> dict:
    f = rc.filters
    slope = f.signal.slope
    return {
        "source": rc.source.to_config(),
        "pump": rc.pump.to_config(),
        "filters": {
            "label": f.label,
            "signal_lo_nm": f.signal.band.lo,
            "signal_hi_nm": f.signal.band.hi,
            "idler_lo_nm": f.idler.band.lo,
            "idler_hi_nm": f.idler.band.hi,
            "edge_slope_db_per_nm": slope if slope != float("inf") else "inf",
            "insertion_loss_db": f.signal.insertion_loss,
        },
        "dispersion": rc.dispersion.to_config(),
        "signal_chain": rc.signal_chain.to_config(),
        "idler_chain": rc.idler_chain.to_config(),
        "run": {
            "duration_s": rc.duration,
            "sync_rate_hz": rc.sync_rate,
            "rng_seed": rc.rng_seed,
            "signal_offset_ps": rc.signal_offset_ps,
            "idler_offset_ps": rc.idler_offset_ps,
            "bin_hint_ps": rc.bin_hint_ps,
        },
    }
