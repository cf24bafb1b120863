"""Run configuration: strict schema, loading and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from .gibbs import DensityPoint, find_frame_density, invert_density
from .model import JumpKernel, RateModel, build_rate_model
from .operators import TestFunction


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_MODES = {"type": "array", "minItems": 1,
          "items": {"type": "array", "minItems": 2, "maxItems": 3,
                    "prefixItems": [{"type": "integer", "minimum": 0}, _NUM, _NUM]}}

ESTIMATORS = ["field", "decompose", "qv", "bg1", "bg2", "energy", "autocorrelation"]

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "kernel", "lattice", "density"],
    "properties": {
        "model": {
            "type": "object", "additionalProperties": False, "required": ["family", "n"],
            "properties": {
                "family": {"enum": ["constant", "linear", "coupled", "potential-coupled"]},
                "n": _INT,
                "params": {"type": "object", "additionalProperties": False,
                           "properties": {"gamma": _NUM}},
                "cap": {"type": "integer", "minimum": 2, "maximum": 32767},
            },
        },
        "kernel": {
            "type": "object", "additionalProperties": False, "required": ["alpha"],
            "properties": {"alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                           "c_plus": {"type": "number", "minimum": 0},
                           "c_minus": {"type": "number", "minimum": 0}},
        },
        "lattice": {"type": "object", "additionalProperties": False, "required": ["N"],
                    "properties": {"N": {"type": "integer", "minimum": 2}}},
        "density": {
            "oneOf": [
                {"const": "frame-solve"},
                {"type": "object", "additionalProperties": False, "required": ["rho"],
                 "properties": {"rho": {"type": "array", "items": _POS, "minItems": 1}}},
                {"type": "object", "additionalProperties": False, "required": ["frame_solve"],
                 "properties": {"frame_solve": {
                     "type": "object", "additionalProperties": False,
                     "properties": {"box": {"type": "array", "items": {
                         "type": "array", "items": _POS, "minItems": 2, "maxItems": 2}},
                         "starts": _INT}}}},
            ],
        },
        "sim": {
            "type": "object", "additionalProperties": False,
            "properties": {"T": _POS, "replicas": _INT, "seed": {"type": "integer", "minimum": 0},
                           "grid_steps": _INT, "lam": _NUM, "keep_jumps": {"type": "boolean"},
                           "snapshots": {"type": "boolean"}},
        },
        "estimators": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["name"],
                "properties": {
                    "name": {"enum": ESTIMATORS},
                    "modes": _MODES,
                    "g_modes": _MODES,
                    "species": {"type": "integer", "minimum": 0},
                    "ell": _INT,
                    "epsilon": {"type": "array", "items": _POS, "minItems": 1},
                    "lags": {"type": "array", "items": _POS, "minItems": 1},
                },
            },
        },
        "ou": {
            "type": "object", "additionalProperties": False,
            "properties": {"K": _INT, "dt": _POS, "noise": {"enum": ["calibrated", "literal"]},
                           "discrete": {"type": "boolean"}, "quadratic": {"type": "boolean"}},
        },
        "gap": {
            "type": "object", "additionalProperties": False,
            "properties": {"ells": {"type": "array", "items": _INT, "minItems": 2},
                           "totals": {"type": "array", "items": _INT, "minItems": 1}},
        },
        "sweep": {
            "type": "object", "additionalProperties": False, "required": ["axis", "values"],
            "properties": {"axis": {"enum": ["N", "ell", "epsilon"]},
                           "values": {"type": "array", "items": _POS, "minItems": 1},
                           "estimator": {"enum": ESTIMATORS},
                           "fit_slope": {"type": "boolean"}},
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"},
                           "formats": {"type": "array", "items": {"enum": ["csv", "json", "bin"]}}},
        },
    },
}

DEFAULTS = {
    "model": {"params": {}, "cap": 64},
    "kernel": {"c_plus": 0.75, "c_minus": 0.25},
    "sim": {"T": 0.5, "replicas": 1000, "seed": 0, "grid_steps": 64, "keep_jumps": False, "snapshots": False},
    "estimators": [],
    "ou": {"K": 16, "dt": 1e-3, "noise": "calibrated", "discrete": True, "quadratic": True},
    "gap": {"ells": [1, 2, 3, 4], "totals": [1, 3]},
    "output": {"dir": "out", "formats": ["csv", "json"]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    data: dict
    source: str = "<dict>"

    @classmethod
    def from_dict(cls, data: dict, source: str = "<dict>") -> "RunConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}") from None
        merged = _merge(DEFAULTS, data)
        rho = merged["density"].get("rho") if isinstance(merged["density"], dict) else None
        if rho is not None and len(rho) != merged["model"]["n"]:
            raise ConfigError("density/rho: length must equal model/n")
        return cls(merged, source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        try:
            data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("top level must be a mapping")
        return cls.from_dict(data, str(path))

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def override(self, **updates) -> "RunConfig":
        """Copy with dotted-path updates such as ``{"sim.seed": 3}``."""
        data = copy.deepcopy(self.data)
        for key, value in updates.items():
            node = data
            *head, last = key.split(".")
            for h in head:
                node = node[h]
            node[last] = value
        return RunConfig(data, self.source)

    # -- builders --------------------------------------------------------

    @property
    def sim(self) -> dict:
        return self.data["sim"]

    def model(self) -> RateModel:
        m = self.data["model"]
        return build_rate_model(m["family"], m["n"], **m.get("params", {}))

    def kernel(self, N: int | None = None) -> JumpKernel:
        k = self.data["kernel"]
        return JumpKernel(k["alpha"], k["c_plus"], k["c_minus"], N or self.data["lattice"]["N"])

    @property
    def frame_solve(self) -> bool:
        d = self.data["density"]
        return d == "frame-solve" or (isinstance(d, dict) and "frame_solve" in d)

    def point(self) -> DensityPoint:
        model = self.model()
        cap = self.data["model"]["cap"]
        d = self.data["density"]
        if not self.frame_solve:
            return invert_density(model, d["rho"], cap)
        opts = d.get("frame_solve", {}) if isinstance(d, dict) else {}
        box = opts.get("box", [[0.1, 2.0]])
        return find_frame_density(model, box, cap, starts=opts.get("starts", 6))


def make_test_function(modes) -> TestFunction:
    """``[[k, re, im], ...]`` to a trigonometric test function."""
    out = {}
    for m in modes:
        k, re = int(m[0]), float(m[1])
        im = float(m[2]) if len(m) > 2 else 0.0
        out[k] = out.get(k, 0) + complex(re, im)
    return TestFunction.from_modes(out)

