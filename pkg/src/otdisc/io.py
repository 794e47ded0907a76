"""Artifact writers and readers.

Floats are written with ``%.17g`` so files round-trip exactly and identical
runs produce byte-identical output.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .sinkhorn import DiscreteMeasure

FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


def _clean(obj):
    """Make numpy scalars/arrays and non-finite floats JSON-safe."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_measure_csv(path, measure: DiscreteMeasure, coord_names=None) -> Path:
    """Columns ``x0, x1, ..., weight``, one atom per row."""
    path = Path(path)
    d = measure.dim
    names = list(coord_names) if coord_names else [f"x{c}" for c in range(d)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["weight"])
        for p, q in zip(measure.positions, measure.weights):
            w.writerow([_fmt(v) for v in p] + [_fmt(q)])
    return path


def read_measure_csv(path) -> DiscreteMeasure:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return DiscreteMeasure(data[:, :-1], data[:, -1])


def write_trace_ndjson(path, trace) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for rec in trace:
            fh.write(json.dumps(_clean(rec.to_dict()), sort_keys=True) + "\n")
    return path


def write_plan_csv(path, plan, xs, ys) -> Path:
    """Columns ``i, j, x coords..., y coords..., mass`` for every entry."""
    path = Path(path)
    xs = np.atleast_2d(xs)
    ys = np.atleast_2d(ys)
    hdr = ["i", "j"] + [f"x{c}" for c in range(xs.shape[1])] + [f"y{c}" for c in range(ys.shape[1])] + ["mass"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(hdr)
        for i in range(xs.shape[0]):
            for j in range(ys.shape[0]):
                w.writerow([i, j] + [_fmt(v) for v in xs[i]] + [_fmt(v) for v in ys[j]] + [_fmt(plan.masses[i, j])])
    return path


def write_percentiles_csv(path, summary) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "p5", "p25", "p50", "p75", "p95"])
        for row in summary.percentile_rows():
            w.writerow([row[0]] + [_fmt(v) for v in row[1:]])
    return path


def write_mccann_slices(out_dir, slices) -> Path:
    """One CSV per ``t`` plus a ``mccann.json`` manifest; ``slices`` is ``[(t, measure), ...]``."""
    out_dir = Path(out_dir)
    entries = []
    for n, (t, measure) in enumerate(slices):
        name = f"mccann_{n:03d}.csv"
        write_measure_csv(out_dir / name, measure)
        entries.append({"t": float(t), "file": name, "atoms": measure.size})
    return write_json(out_dir / "mccann.json", {"slices": entries})
