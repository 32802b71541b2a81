"""Plain-text snapshots of spin configurations and disorder fields.

A snapshot is a CSV file with one row per site (row-major site order) and a
one-line ``#`` header carrying the geometry, so it can be reloaded without
extra metadata. Floats are written with ``repr`` and round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .lattice import LatticeGeometry, build_box_lattice

KINDS = ("spins", "disorder")


def write_snapshot(path, values: np.ndarray, geom: LatticeGeometry, kind: str = "spins") -> None:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != geom.n_sites:
        raise ValueError(f"expected ({geom.n_sites}, m) values, got {values.shape}")
    header = {"kind": kind, "shape": list(geom.shape), "periodic": geom.periodic, "columns": values.shape[1]}
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"c{i}" for i in range(values.shape[1])])
        for row in values:
            w.writerow([repr(float(v)) for v in row])


def read_snapshot(path) -> tuple[np.ndarray, LatticeGeometry, str]:
    """Returns ``(values, geometry, kind)``."""
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing snapshot header")
        header = json.loads(first[2:])
        rows = list(csv.reader(fh))
    geom = build_box_lattice(tuple(header["shape"]), bool(header["periodic"]))
    values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, header["columns"])
    if values.shape[0] != geom.n_sites:
        raise ValueError(f"{path}: {values.shape[0]} rows for {geom.n_sites} sites")
    return values, geom, header["kind"]
