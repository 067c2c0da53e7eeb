"""Matrix and config readers, result writers, run manifests."""
from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np

from . import __version__


class InputError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, msg, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.path, self.line = path, line


def read_matrix_csv(path):
    """Dense row-major matrix; blank lines and '#' comments are skipped."""
    rows, width = [], None
    with open(path, newline="") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                vals = [float(v) for v in next(csv.reader([line]))]
            except ValueError as e:
                raise InputError(f"not a number ({e})", path, n) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputError(f"expected {width} entries, found {len(vals)}", path, n)
            if not all(math.isfinite(v) for v in vals):
                raise InputError("non-finite entry", path, n)
            rows.append(vals)
    if not rows:
        raise InputError("empty matrix", path)
    A = np.array(rows)
    if A.shape[0] != A.shape[1]:
        raise InputError(f"matrix is {A.shape[0]}x{A.shape[1]}, expected square", path)
    return A


def write_matrix_csv(A, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(A, dtype=float):
            w.writerow([repr(float(v)) for v in row])


def _scalar(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _fmt(v):
    v = _scalar(v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_rows(rows, path, fmt="csv"):
    """Write dict rows as CSV (shortest round-trip floats) or a JSON array."""
    path = Path(path)
    rows = [{k: _scalar(v) for k, v in r.items()} for r in rows]
    if fmt == "json":
        path = path.with_suffix(".json")
        path.write_text(json.dumps(rows, indent=1, default=_json_default) + "\n")
        return path
    path = path.with_suffix(".csv")
    fields = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return path


def read_rows(path):
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    return _scalar(o) if not isinstance(o, (np.generic,)) else o.item()


def load_config(path):
    """Flat config: JSON object, a run manifest, or 'key = value' lines.

    Returns (subcommand or None, dict of raw values). Values from text files
    stay strings; the CLI parses them like the matching flags.
    """
    text = Path(path).read_text()
    s = text.lstrip()
    if s.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise InputError(f"invalid JSON ({e.msg})", path, e.lineno) from None
        if "config" in obj and "tool" in obj:
            return obj.get("subcommand"), dict(obj["config"])
        return None, obj
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError("expected 'key = value'", path, n)
        k, v = (p.strip() for p in line.split("=", 1))
        if not k:
            raise InputError("empty key", path, n)
        out[k] = v
    return None, out


def manifest(subcommand, config, outputs, extra=None):
    m = {"tool": "rbmkit", "version": __version__, "subcommand": subcommand,
         "config": config, "outputs": [str(o) for o in outputs],
         "python": platform.python_version(), "numpy": np.__version__}
    if extra:
        m.update(extra)
    return m


def write_manifest(m, out_dir):
    p = Path(out_dir) / "manifest.json"
    p.write_text(json.dumps(m, indent=1, sort_keys=True, default=_json_default) + "\n")
    return p
