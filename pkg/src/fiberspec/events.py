"""Per-photon timestamp streams and their binary / CSV file formats.

Binary layout (little-endian)::

    header  magic b"BFSE" | version u16 | period_ps u64 | bin_hint_ps u32 | digest 32 B
    record  channel u8 | pulse_index u64 | time_in_period_ps u32     (13 bytes, packed)

The header carries no record count: a trailing partial record is reported as
truncation at its byte offset.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (MalformedHeaderError, TruncatedRecordError, ValidationError,
                     VersionMismatchError)

SIGNAL = 0
IDLER = 1
CHANNEL_NAMES = {SIGNAL: "signal", IDLER: "idler"}

MAGIC = b"BFSE"
VERSION = 1
HEADER = struct.Struct("<4sHQI32s")
RECORD_DTYPE = np.dtype([("channel", "<u1"), ("pulse_index", "<u8"), ("time_ps", "<u4")])
assert RECORD_DTYPE.itemsize == 13


class TimestampRecord(NamedTuple):
    channel: int
    pulse_index: int
    time_in_period: int


@dataclass
class EventStream:
    channel: np.ndarray
    pulse_index: np.ndarray
    time_ps: np.ndarray
    period_ps: int
    bin_hint_ps: int = 64
    config_digest: bytes = field(default=bytes(32))

    def __post_init__(self):
        self.channel = np.asarray(self.channel, dtype=np.uint8)
        self.pulse_index = np.asarray(self.pulse_index, dtype=np.uint64)
        self.time_ps = np.asarray(self.time_ps, dtype=np.uint32)
        n = self.channel.size
        if self.pulse_index.size != n or self.time_ps.size != n:
            raise ValidationError("event arrays differ in length")
        if len(self.config_digest) != 32:
            raise ValidationError("config digest must be 32 bytes")
        self.period_ps = int(self.period_ps)
        self.bin_hint_ps = int(self.bin_hint_ps)

    def __len__(self):
        return int(self.channel.size)

    def __iter__(self):
        for c, p, t in zip(self.channel.tolist(), self.pulse_index.tolist(), self.time_ps.tolist()):
            yield TimestampRecord(c, p, t)

    @classmethod
    def empty(cls, period_ps, bin_hint_ps=64, config_digest=bytes(32)):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), period_ps, bin_hint_ps, config_digest)

    @classmethod
    def from_records(cls, records, period_ps, bin_hint_ps=64, config_digest=bytes(32)):
        recs = list(records)
        arr = np.array([tuple(r) for r in recs], dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], period_ps, bin_hint_ps, config_digest)

    def select(self, mask) -> "EventStream":
        return EventStream(self.channel[mask], self.pulse_index[mask], self.time_ps[mask],
                           self.period_ps, self.bin_hint_ps, self.config_digest)

    def sorted(self) -> "EventStream":
        order = np.lexsort((self.channel, self.time_ps, self.pulse_index))
        return self.select(order)

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.pulse_index.astype(np.int64)) >= 0)) if len(self) else True

    def equals(self, other: "EventStream") -> bool:
        return (self.period_ps == other.period_ps and self.bin_hint_ps == other.bin_hint_ps
                and self.config_digest == other.config_digest
                and np.array_equal(self.channel, other.channel)
                and np.array_equal(self.pulse_index, other.pulse_index)
                and np.array_equal(self.time_ps, other.time_ps))

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["channel"] = self.channel
        rec["pulse_index"] = self.pulse_index
        rec["time_ps"] = self.time_ps
        return rec


def concatenate(streams) -> EventStream:
    """Merge partial streams (e.g. per-block results) into one sorted stream."""
    streams = list(streams)
    first = streams[0]
    return EventStream(
        np.concatenate([s.channel for s in streams]),
        np.concatenate([s.pulse_index for s in streams]),
        np.concatenate([s.time_ps for s in streams]),
        first.period_ps, first.bin_hint_ps, first.config_digest,
    ).sorted()


def _open(target, mode):
    if isinstance(target, (str, os.PathLike)):
        return open(target, mode), True
    return target, False


def write_events(stream: EventStream, sink) -> None:
    fh, owned = _open(sink, "wb")
    try:
        fh.write(HEADER.pack(MAGIC, VERSION, stream.period_ps, stream.bin_hint_ps,
                             stream.config_digest))
        fh.write(stream.to_records().tobytes())
    finally:
        if owned:
            fh.close()


def read_events(source) -> EventStream:
    fh, owned = _open(source, "rb")
    try:
        raw = fh.read()
    finally:
        if owned:
            fh.close()
    if len(raw) < HEADER.size:
        raise MalformedHeaderError(
            f"file holds {len(raw)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, period, bin_hint, digest = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"event file version {version}, reader supports {VERSION}")
    if period == 0:
        raise MalformedHeaderError("sync period of zero in header")
    body = len(raw) - HEADER.size
    n, rem = divmod(body, RECORD_DTYPE.itemsize)
    if rem:
        offset = HEADER.size + n * RECORD_DTYPE.itemsize
        raise TruncatedRecordError(
            f"truncated record at byte offset {offset} ({rem} of {RECORD_DTYPE.itemsize} bytes)",
            offset=offset)
    rec = np.frombuffer(raw, dtype=RECORD_DTYPE, count=n, offset=HEADER.size)
    return EventStream(rec["channel"].copy(), rec["pulse_index"].copy(), rec["time_ps"].copy(),
                       period, bin_hint, digest)


def write_events_csv(stream: EventStream, sink) -> None:
    fh, owned = _open(sink, "w")
    try:
        fh.write(f"# period_ps={stream.period_ps} bin_hint_ps={stream.bin_hint_ps} "
                 f"digest={stream.config_digest.hex()}\n")
        fh.write("channel,pulse_index,time_ps\n")
        buf = io.StringIO()
        np.savetxt(buf, np.column_stack([stream.channel, stream.pulse_index, stream.time_ps]),
                   fmt="%d", delimiter=",")
        fh.write(buf.getvalue())
    finally:
        if owned:
            fh.close()


def read_events_csv(source) -> EventStream:
    fh, owned = _open(source, "r")
    try:
        lines = fh.read().splitlines()
    finally:
        if owned:
            fh.close()
    meta = {}
    if not lines or not lines[0].startswith("#"):
        raise MalformedHeaderError("CSV event file lacks the metadata comment line")
    for tok in lines[0][1:].split():
        k, _, v = tok.partition("=")
        meta[k] = v
    if len(lines) < 2 or lines[1].strip() != "channel,pulse_index,time_ps":
        raise MalformedHeaderError("CSV event file lacks the column header")
    rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
    for i, r in enumerate(rows):
        if len(r) != 3:
            raise TruncatedRecordError(f"malformed CSV record on line {i + 3}", offset=i + 3)
    arr = np.array(rows, dtype=np.uint64).reshape(-1, 3)
    try:
        return EventStream(arr[:, 0], arr[:, 1], arr[:, 2], int(meta["period_ps"]),
                           int(meta["bin_hint_ps"]), bytes.fromhex(meta["digest"]))
    except KeyError as exc:
        raise MalformedHeaderError(f"CSV metadata misses {exc.args[0]}") from None
