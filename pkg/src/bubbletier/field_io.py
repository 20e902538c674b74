"""Field serialization: JSON header + little-endian float64 binary payload."""

from __future__ import annotations

import json
import os

import numpy as np

from .ansatz import Field
from .config import SCHEMA_VERSION
from .geometry import SurfaceSpec, build_grid


def write_field(path: str, field: Field, extra: dict = None):
    """Write `<path>.json` header and `<path>.bin` values."""
    grid = field.grid
    surf = grid.surface
    header = {
        "schema_version": SCHEMA_VERSION,
        "surface": {"kind": surf.kind},
        "dtype": "<f8",
        "count": len(field.values),
    }
    if surf.kind == "torus":
        header["surface"]["lattice"] = surf.lattice.T.tolist()
        header["resolution"] = grid.n
    else:
        header["resolution"] = grid.lmax
    if extra:
        header.update(extra)
    with open(path + ".json", "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
    field.values.astype("<f8").tofile(path + ".bin")


def read_field(path: str) -> Field:
    base = path[:-4] if path.endswith((".bin", ".json")) else path
    with open(base + ".json") as fh:
        header = json.load(fh)
    s = header["surface"]
    if s["kind"] == "torus":
        surf = SurfaceSpec("torus", np.array(s["lattice"], dtype=float).T)
    else:
        surf = SurfaceSpec("sphere")
    grid = build_grid(surf, header["resolution"])
    vals = np.fromfile(base + ".bin", dtype="<f8")
    if len(vals) != header["count"] or len(vals) != len(grid.nodes):
        raise ValueError(f"field payload size mismatch in {base}.bin")
    return Field(grid, vals)


def write_json(path: str, payload: dict):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
