"""Small structured-text container shared by the histogram, fit and spectrum files.

Layout::

    # <kind> v1
    key = <json value>
    ...
    [section]
    <whitespace-separated rows>

Values are JSON so numbers, strings and lists round-trip exactly.
"""
from __future__ import annotations

import io
import json
import os

import numpy as np

from .errors import FormatError, MalformedHeaderError


def _fmt_row(row, fmt):
    return " ".join(fmt % v for v in row)


def dumps(kind: str, header: dict, sections: dict, fmts: dict | None = None) -> str:
    fmts = fmts or {}
    out = io.StringIO()
    out.write(f"# {kind} v1\n")
    for k, v in header.items():
        out.write(f"{k} = {json.dumps(v, sort_keys=True)}\n")
    for name, arr in sections.items():
        arr = np.asarray(arr)
        fmt = fmts.get(name, "%d" if arr.dtype.kind in "iub" else "%.17g")
        out.write(f"[{name}]\n")
        if arr.ndim == 1:
            out.write(_fmt_row(arr.tolist() if arr.dtype.kind in "iub" else arr, fmt) + "\n")
        else:
            for row in arr:
                out.write(_fmt_row(row.tolist() if arr.dtype.kind in "iub" else row, fmt) + "\n")
    return out.getvalue()


def write(path, kind, header, sections, fmts=None):
    text = dumps(kind, header, sections, fmts)
    if isinstance(path, (str, os.PathLike)):
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    else:
        path.write(text)


def loads(text: str, kind: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {kind} v1":
        raise MalformedHeaderError(f"not a {kind} file (first line {lines[:1]!r})")
    header: dict = {}
    sections: dict = {}
    current = None
    for n, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1]
            sections[current] = []
            continue
        if current is None:
            if s.startswith("#"):
                continue
            key, sep, val = s.partition("=")
            if not sep:
                raise FormatError(f"line {n}: expected 'key = value'")
            try:
                header[key.strip()] = json.loads(val.strip())
            except json.JSONDecodeError:
                raise FormatError(f"line {n}: bad value {val.strip()!r}") from None
        else:
            sections[current].append(s.split())
    return header, sections


def read(path, kind):
    if isinstance(path, (str, os.PathLike)):
        with open(path) as fh:
            return loads(fh.read(), kind)
    return loads(path.read(), kind)


def as_array(rows, dtype=float, ndim=2):
    if ndim == 1:
        flat = [v for r in rows for v in r]
        return np.array(flat, dtype=dtype)
    if not rows:
        return np.zeros((0, 0), dtype=dtype)
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError("ragged matrix rows")
    return np.array(rows, dtype=dtype)
