"""Plain-text readers and writers used by the command-line interface.

Matrices are comma-separated with 17 significant digits, so a write/read
round trip is bit-exact. Lines starting with ``#`` carry provenance and
are skipped on reading.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import SBGraphError

__all__ = [
    "InputError",
    "MISSING_TOKENS",
    "read_data_csv",
    "read_matrix",
    "read_pattern",
    "write_matrix",
    "write_table",
    "write_json",
    "write_jsonl",
    "provenance_lines",
]

MISSING_TOKENS = frozenset({"", "NA", "na", "NaN", "nan"})


class InputError(SBGraphError, ValueError):
    """Malformed input file; the message names the offending line."""


def _content_lines(path):
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            yield lineno, line


def _to_float(tok: str) -> float:
    tok = tok.strip()
    if tok in MISSING_TOKENS:
        return np.nan
    return float(tok)


def read_data_csv(path) -> tuple[np.ndarray, list[str] | None]:
    """Read an ``n x p`` data table; empty fields and ``NA`` become NaN.

    A first row that does not parse as numbers is taken as a header.
    """
    rows, header, width = [], None, None
    for lineno, line in _content_lines(path):
        fields = next(csv.reader([line]))
        try:
            vals = [_to_float(f) for f in fields]
        except ValueError:
            if header is None and not rows:
                header = [f.strip() for f in fields]
                width = len(header)
                continue
            raise InputError(f"{path}: line {lineno}: non-numeric field") from None
        if width is None:
            width = len(vals)
        if len(vals) != width:
            raise InputError(f"{path}: line {lineno}: expected {width} fields, found {len(vals)}")
        rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.array(rows, dtype=float), header


def read_matrix(path) -> np.ndarray:
    """Read a dense numeric matrix written by :func:`write_matrix`."""
    rows = []
    for lineno, line in _content_lines(path):
        try:
            rows.append([float(f) for f in line.strip().split(",")])
        except ValueError:
            raise InputError(f"{path}: line {lineno}: non-numeric entry") from None
        if len(rows[-1]) != len(rows[0]):
            raise InputError(f"{path}: line {lineno}: ragged row")
    if not rows:
        raise InputError(f"{path}: empty matrix")
    return np.array(rows)


def read_pattern(path) -> np.ndarray:
    """Read a square 0/1 matrix (comma or whitespace separated).

    Only the strict lower triangle is used by the caller, but every entry must
    be 0 or 1 and the matrix must be square.
    """
    rows = []
    for lineno, line in _content_lines(path):
        toks = line.replace(",", " ").split()
        bad = [t for t in toks if t not in ("0", "1")]
        if bad:
            raise InputError(f"{path}: line {lineno}: expected 0 or 1, found {bad[0]!r}")
        if rows and len(toks) != len(rows[0]):
            raise InputError(f"{path}: line {lineno}: expected {len(rows[0])} entries, found {len(toks)}")
        rows.append([t == "1" for t in toks])
    if not rows:
        raise InputError(f"{path}: empty pattern")
    if len(rows) != len(rows[0]):
        raise InputError(f"{path}: pattern must be square, got {len(rows)} x {len(rows[0])}")
    return np.array(rows, dtype=bool)


def provenance_lines(config: dict) -> list[str]:
    return ["# sbgraph " + json.dumps(config, sort_keys=True)]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    return "NA" if np.isnan(x) else "%.17g" % x


def write_matrix(path, m, config: dict | None = None) -> None:
    m = np.atleast_2d(np.asarray(m))
    with open(path, "w") as fh:
        for line in provenance_lines(config) if config is not None else []:
            fh.write(line + "\n")
        for row in m:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_table(path, columns: list[str], rows, config: dict | None = None) -> None:
    """Header plus one comma-separated line per row (a row is a sequence or a dict)."""
    with open(path, "w") as fh:
        for line in provenance_lines(config) if config is not None else []:
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            vals = [row[c] for c in columns] if isinstance(row, dict) else row
            fh.write(",".join(_fmt(v) for v in vals) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if not np.isfinite(x) else x
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_jsonl(path, records, header: dict | None = None) -> None:
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps(_jsonable(header), sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
