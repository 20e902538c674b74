"""Run configuration: TOML parsing, schema validation, object construction."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import tomli
from jsonschema import Draft202012Validator

from .geometry import ConfigurationError, SurfaceSpec
from .hamiltonian import ConstantPotential, GreenExpPotential, VortexConfig

SCHEMA_VERSION = "1"

_POTENTIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["constant", "green-exponential"]},
        "value": {"type": "number", "exclusiveMinimum": 0},
        "orders": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    },
    "required": ["kind"],
}

RUN_SCHEMA = {
    "type": "object",
    "properties": {
        "surface": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["sphere", "torus"]},
                "lattice": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "minItems": 2,
                    "maxItems": 2,
                },
            },
            "required": ["kind"],
        },
        "vortex": {
            "type": "object",
            "properties": {
                "m1": {"type": "integer", "minimum": 0},
                "m2": {"type": "integer", "minimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "xi": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}},
                },
                "auto_critical": {"type": "boolean"},
                "potential1": _POTENTIAL_SCHEMA,
                "potential2": _POTENTIAL_SCHEMA,
            },
            "required": ["m1", "m2", "tau", "xi"],
        },
        "numerics": {
            "type": "object",
            "properties": {
                "resolution": {"type": "integer", "minimum": 8},
                "sigma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "deltas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "mu": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "c0": {"type": "number", "exclusiveMinimum": 0},
                "offset_scale": {"type": "number"},
                "bstar_grid": {"type": "integer", "minimum": 8},
            },
            "required": ["resolution"],
        },
        "experiment": {
            "type": "object",
            "properties": {"output_dir": {"type": "string"}},
        },
    },
    "required": ["surface", "vortex", "numerics"],
}

_validator = Draft202012Validator(RUN_SCHEMA)


class RunConfig:
    """Validated run configuration with lazily built model objects."""

    def __init__(self, data: dict):
        errors = sorted(_validator.iter_errors(data), key=lambda e: e.json_path)
        if errors:
            msgs = "; ".join(f"{e.json_path}: {e.message}" for e in errors)
            raise ConfigurationError(f"config validation failed: {msgs}")
        self.data = data
        self.surface = self._build_surface()
        self.vortex = self._build_vortex()
        num = data["numerics"]
        self.resolution = num["resolution"]
        self.sigma = num.get("sigma", 0.25)
        self.deltas = num.get("deltas", [0.04, 0.02, 0.01, 0.005])
        self.mu = tuple(num.get("mu", [1.0, 1.0]))
        self.c0 = num.get("c0", 10.0)
        self.offset_scale = num.get("offset_scale", 1.0)
        self.bstar_grid = num.get("bstar_grid", 384)
        self.output_dir = data.get("experiment", {}).get("output_dir", "out")
        self._check_cross_constraints()

    @classmethod
    def from_toml(cls, path: str):
        with open(path, "rb") as fh:
            return cls(tomli.load(fh))

    def _build_surface(self) -> SurfaceSpec:
        s = self.data["surface"]
        if s["kind"] == "torus":
            return SurfaceSpec("torus", np.array(s.get("lattice", [[1, 0], [0, 1]]), dtype=float).T)
        return SurfaceSpec("sphere")

    def _build_potential(self, spec):
        if spec is None or spec["kind"] == "constant":
            return ConstantPotential(spec.get("value", 1.0) if spec else 1.0)
        return GreenExpPotential(self.surface, spec["orders"], [np.array(p) for p in spec["points"]])

    def _build_vortex(self) -> VortexConfig:
        v = self.data["vortex"]
        xi = [np.array(p, dtype=float) for p in v["xi"]]
        dim_needed = 3 if self.surface.kind == "sphere" else 2
        for p in xi:
            if len(p) != dim_needed:
                raise ConfigurationError(
                    f"xi points must have {dim_needed} components on a {self.surface.kind}"
                )
        return VortexConfig(
            self.surface,
            v["m1"],
            v["m2"],
            v["tau"],
            xi,
            self._build_potential(v.get("potential1")),
            self._build_potential(v.get("potential2")),
        )

    def _check_cross_constraints(self):
        # bubbles must stay resolvable for the requested deltas
        from .hamiltonian import rho_at_points

        rho = rho_at_points(self.vortex)
        if self.surface.kind == "torus":
            h = min(
                np.linalg.norm(self.surface.lattice[:, 0]),
                np.linalg.norm(self.surface.lattice[:, 1]),
            ) / self.resolution
        else:
            h = np.pi / (self.resolution + 1)
        dmin = min(self.deltas) * min(self.mu) * float(np.sqrt(rho.min()))
        if dmin < 3.0 * h:
            raise ConfigurationError(
                f"smallest bubble width {dmin:.3g} below 3 grid spacings ({3*h:.3g}); "
                "raise resolution or delta"
            )

    def config_hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def stamp(self) -> dict:
        from . import __version__

        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash(),
            "version": __version__,
        }
