"""Deterministic JSON and CSV writers for artifact files and reports.

Floats are rendered with 17 significant digits, which round-trips every
IEEE double bit-exactly, and dictionaries keep insertion order, so a given
object always serializes to the same bytes.
"""

from __future__ import annotations

import json
import math
import os
from typing import Iterable

SCHEMA_VERSION = 1


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite number {x!r} cannot be serialized")
    if x == int(x) and abs(x) < 1e16:
        return repr(x)  # keep e.g. 1024.0 readable
    return format(x, ".17g")


def dumps_json(obj, indent: int | None = None) -> str:
    """Serialize with deterministic bytes and full-precision floats."""
    pieces: list[str] = []
    _emit(obj, pieces, indent, 0)
    return "".join(pieces)


def _emit(obj, out: list[str], indent: int | None, level: int) -> None:
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end_pad = "" if indent is None else "\n" + " " * (indent * level)
    sep = "," if indent is None else ","
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be strings, got {k!r}")
            if i:
                out.append(sep)
            out.append(pad)
            out.append(json.dumps(k))
            out.append(": " if indent is not None else ":")
            _emit(v, out, indent, level + 1)
        out.append(end_pad)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(sep)
            out.append(pad)
            _emit(v, out, indent, level + 1)
        out.append(end_pad)
        out.append("]")
    elif hasattr(obj, "item"):  # numpy scalars
        _emit(obj.item(), out, indent, level)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj, indent: int | None = 2) -> None:
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        fh.write(dumps_json(obj, indent))
        fh.write("\n")


def read_json(path):
    with open(os.fspath(path), encoding="utf-8") as fh:
        return json.load(fh)


def csv_text(header: Iterable[str], rows: Iterable[Iterable]) -> str:
    """Small deterministic CSV writer (numeric and plain-string cells only)."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, bool):
                cells.append(str(cell).lower())
            elif isinstance(cell, float):
                cells.append(format_float(cell))
            elif cell is None:
                cells.append("")
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(os.fspath(path), "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))
