"""On-disk layout of a run directory.

Files per step k:

* ``grid_k.csv``: ``flat,i1..id,x1..xd,weight``. ``flat`` is the zero-based
  row-major index ``sum_l (i_l - 1) * stride_l`` and the ``i_l`` are one-based.
* ``transition_k.csv``: ``row,col,value`` for step k -> k+1, flat indices,
  entries below 1e-14 omitted.
* ``lambda_k.csv``: ``row,col,p,value`` with the noise index p one-based.

``manifest.json`` records everything needed to rebuild the numbers: model and
parameters, time grid, level table, cubature, optimizer options, seed and
per-phase timings. Floats are written with ``repr`` (shortest round trip).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

TRANSITION_FLOOR = 1e-14


def fmt(x) -> str:
    return repr(float(x))


def write_grid(path, grid, weights) -> None:
    d = grid.d
    multi = grid.multi_indices + 1
    pts = grid.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flat"] + [f"i{l + 1}" for l in range(d)] + [f"x{l + 1}" for l in range(d)]
                   + ["weight"])
        for flat in range(grid.size):
            w.writerow([flat] + multi[flat].tolist() + [fmt(v) for v in pts[flat]]
                       + [fmt(weights[flat])])


def write_transition(path, matrix, floor: float = TRANSITION_FLOOR) -> int:
    rows, cols = np.nonzero(np.abs(matrix) >= floor)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "value"])
        for i, j in zip(rows.tolist(), cols.tolist()):
            w.writerow([i, j, fmt(matrix[i, j])])
    return int(rows.size)


def write_lambda(path, values, floor: float = TRANSITION_FLOOR) -> int:
    idx = np.argwhere(np.abs(values) >= floor)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "p", "value"])
        for i, j, p in idx.tolist():
            w.writerow([i, j, p + 1, fmt(values[i, j, p])])
    return int(idx.shape[0])


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def cubature_spec(rule) -> dict:
    from .gaussian import CubatureRule
    from .piecewise import PiecewiseRule
    if isinstance(rule, PiecewiseRule):
        return {"kind": "piecewise", "panels": rule.panels, "order": rule.order,
                "cutoff": rule.cutoff}
    if isinstance(rule, CubatureRule):
        return {"kind": "rule", "label": rule.label, "dimension": rule.dimension, "nodes": rule.size}
    return {"kind": "none"}


def write_chain(out_dir, chain) -> list:
    """Grids and transition matrices of every step; returns the file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, (grid, w) in enumerate(zip(chain.grids, chain.weights)):
        write_grid(out / f"grid_{k}.csv", grid, w)
        files.append(f"grid_{k}.csv")
    for k, t in enumerate(chain.transitions):
        write_transition(out / f"transition_{k}.csv", t.matrix)
        files.append(f"transition_{k}.csv")
    return files


def chain_manifest(chain) -> dict:
    grids = chain.grids
    return {
        "model": {"name": chain.model.name, "params": chain.model.params,
                  "d": chain.model.d, "q": chain.model.q, "x0": chain.model.x0.tolist()},
        "time": {"horizon": chain.time_grid.horizon, "steps": chain.time_grid.steps},
        "levels": chain.levels.tolist(),
        "strides": [list(g.strides) for g in grids],
        "index_base": {"flat": 0, "multi": 1, "noise": 1},
        "cubature": cubature_spec(chain.cubature),
        "optimizer": {k: getattr(chain.options, k) for k in (
            "tolerance", "max_newton_iters", "max_lloyd_iters", "max_halvings",
            "probability_floor", "init")},
        "transition_methods": [t.method for t in chain.transitions],
        "normalization_defects": [float(v) for v in chain.diagnostics["normalization_defects"]],
        "transition_floor": TRANSITION_FLOOR,
    }


def write_manifest(out_dir, manifest: dict) -> None:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_grid(path):
    """Back from ``grid_k.csv``: (multi indices one-based, points, weights)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = (data.shape[1] - 2) // 2
    return data[:, 1:1 + d].astype(int), data[:, 1 + d:1 + 2 * d], data[:, -1]


def read_transition(path, shape) -> np.ndarray:
    out = np.zeros(shape)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size:
        out[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2]
    return out
