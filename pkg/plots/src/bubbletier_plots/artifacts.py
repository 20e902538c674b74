"""Readers for the published bubbletier artifact schemas (schema_version 1).

The plots package never recomputes any of the mathematics; it only consumes
JSON/CSV/field-binary files emitted by the primary CLI.
"""

from __future__ import annotations

import csv
import json

import numpy as np

SUPPORTED_SCHEMA = "1"


class SchemaError(ValueError):
    pass


def load_json(path: str, expect_key: str = None) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    version = data.get("schema_version")
    if version != SUPPORTED_SCHEMA:
        raise SchemaError(
            f"{path}: schema_version {version!r} not supported (want {SUPPORTED_SCHEMA})"
        )
    if expect_key and expect_key not in data:
        raise SchemaError(f"{path}: missing section {expect_key!r}")
    return data


def load_field(path: str):
    """Field binary -> (header, 2-D array shaped per the header)."""
    base = path[:-4] if path.endswith((".bin", ".json")) else path
    with open(base + ".json") as fh:
        header = json.load(fh)
    if header.get("schema_version") != SUPPORTED_SCHEMA:
        raise SchemaError(f"{base}.json: unsupported schema_version")
    vals = np.fromfile(base + ".bin", dtype="<f8")
    if len(vals) != header["count"]:
        raise SchemaError(f"{base}.bin: payload size mismatch")
    if header["surface"]["kind"] == "torus":
        n = header["resolution"]
        return header, vals.reshape(n, n)
    lmax = header["resolution"]
    return header, vals.reshape(lmax + 1, 2 * lmax + 2)


def load_csv(path: str) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    cols = {name: [] for name in header}
    for row in body:
        for name, val in zip(header, row):
            cols[name].append(float(val))
    return {k: np.asarray(v) for k, v in cols.items()}
