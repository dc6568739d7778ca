"""Text formats for solved value-function grids and small helpers for run artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .hjb import ValueFunctionGrid

GRID_HEADER = "# srn-mpis value-function grid v1"


def dump_grid(grid: ValueFunctionGrid) -> str:
    """Flat text table: header, bounds, floor, then one row ``t, u(t, s_0), ...`` per node.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    out = io.StringIO()
    out.write(GRID_HEADER + "\n")
    out.write("# bounds: " + " ".join(str(int(b)) for b in np.atleast_1d(grid.bounds)) + "\n")
    out.write(f"# u_floor: {grid.u_floor!r}\n")
    out.write(f"# meta: {json.dumps(grid.meta, sort_keys=True)}\n")
    for t, row in zip(grid.time_nodes, grid.values):
        out.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")
    return out.getvalue()


def load_grid(text: str) -> ValueFunctionGrid:
    lines = text.splitlines()
    if not lines or lines[0].strip() != GRID_HEADER:
        raise ValueError("not a value-function grid file")
    bounds = u_floor = None
    meta = {}
    rows = []
    for line in lines[1:]:
        if line.startswith("# bounds:"):
            bounds = np.array([int(v) for v in line.split(":", 1)[1].split()])
        elif line.startswith("# u_floor:"):
            u_floor = float(line.split(":", 1)[1])
        elif line.startswith("# meta:"):
            meta = json.loads(line.split(":", 1)[1])
        elif line.strip():
            rows.append([float(v) for v in line.split(",")])
    if bounds is None or u_floor is None:
        raise ValueError("grid file is missing its bounds or floor")
    arr = np.array(rows)
    return ValueFunctionGrid(bounds, arr[:, 0], arr[:, 1:], u_floor, meta)


def save_grid(grid: ValueFunctionGrid, path) -> None:
    Path(path).write_text(dump_grid(grid))


def read_grid(path) -> ValueFunctionGrid:
    return load_grid(Path(path).read_text())


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
