"""Pattern and table files (CSV with a commented header) and JSON reports.

Floats are written with repr, which round-trips exactly, so the same
inputs always give the same bytes. Timestamps are written only on request.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .config import canonical_json
from .errors import ConfigError

PATTERN_COLUMNS = ("n", "theta_n_deg", "delta_p_s2_per_hbar_nm_inv", "intensity_rel", "mc_stderr")
MAGIC = "# tiltgrating"


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class PatternFile:
    header: dict
    rows: list = field(default_factory=list)

    @classmethod
    def from_pattern(cls, pattern, header):
        order = np.argsort(pattern.orders)
        err = pattern.stderr
        rows = []
        for i in order:
            rows.append(
                (
                    int(pattern.orders[i]),
                    math.degrees(float(pattern.theta_n[i])),
                    float(pattern.dk_s2[i]),
                    float(pattern.intensity[i]),
                    None if err is None else float(err[i]),
                )
            )
        return cls(dict(header), rows)

    def columns(self):
        return {name: np.array([np.nan if r[j] is None else r[j] for r in self.rows], dtype=float) for j, name in enumerate(PATTERN_COLUMNS)}

    def to_text(self):
        buf = io.StringIO()
        buf.write(f"{MAGIC} pattern\n")
        for key in sorted(self.header):
            val = self.header[key]
            text = canonical_json(val) if isinstance(val, (dict, list)) else str(val)
            buf.write(f"# {key}: {text}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PATTERN_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(x) for x in r])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_text())


def _parse_header(lines):
    header = {}
    for lineno, line in lines:
        body = line[1:].strip()
        if ":" not in body:
            raise ConfigError(f"line {lineno}: malformed header line")
        key, _, val = body.partition(":")
        val = val.strip()
        if val.startswith("{") or val.startswith("["):
            try:
                val = json.loads(val)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"line {lineno}: bad JSON in header: {exc}") from exc
        header[key.strip()] = val
    return header


def read_pattern(path):
    """Read a pattern file; errors name the offending line."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith(MAGIC):
        raise ConfigError(f"line 1: {path} is not a tiltgrating pattern file")
    body_start = 1
    while body_start < len(lines) and lines[body_start].startswith("#"):
        body_start += 1
    head = [(i + 1, lines[i]) for i in range(1, body_start)]
    header = _parse_header(head)
    if body_start >= len(lines):
        raise ConfigError(f"line {body_start + 1}: missing column header")
    cols = next(csv.reader([lines[body_start]]))
    missing = [c for c in PATTERN_COLUMNS if c not in cols]
    if missing:
        raise ConfigError(f"line {body_start + 1}: missing columns {missing}")
    idx = [cols.index(c) for c in PATTERN_COLUMNS]
    rows = []
    for lineno, rec in enumerate(csv.reader(lines[body_start + 1 :]), start=body_start + 2):
        if not rec:
            continue
        if len(rec) != len(cols):
            raise ConfigError(f"line {lineno}: expected {len(cols)} fields, got {len(rec)}")
        try:
            vals = [rec[j] for j in idx]
            row = (int(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]), float(vals[4]) if vals[4] != "" else None)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
        rows.append(row)
    ns = [r[0] for r in rows]
    if ns != sorted(ns):
        raise ConfigError("rows are not sorted by n")
    return PatternFile(header, rows)


def write_table(path, columns, rows, header=None):
    buf = io.StringIO()
    buf.write(f"{MAGIC} table\n")
    for key in sorted(header or {}):
        val = header[key]
        text = canonical_json(val) if isinstance(val, (dict, list)) else str(val)
        buf.write(f"# {key}: {text}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc


def timestamp():
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
