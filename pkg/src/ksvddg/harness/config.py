"""Experiment configuration: a versioned JSON document.

Structural checks (types, enums, required keys) are expressed as a JSON
schema; the few cross-field rules that a schema cannot express are checked
afterwards.  Every problem is reported as :class:`ConfigError` naming the
offending field, or the line and column for malformed JSON.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from ..errors import ConfigError

SCHEMA_VERSION = 1

CASE_IDS = ("advection", "euler_vortex", "euler_periodic_3d")
PRECONDITIONERS = ("jacobi_full", "jacobi_small", "ksvd_full", "ksvd_small")
SCHEMES = ("backward_euler", "dirk3", "rk4")

_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "case", "p"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "case": {"enum": list(CASE_IDS)},
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["cartesian", "perturbed", "scaled"]},
                "counts": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 3},
                "extents": {"type": "array", "minItems": 2, "maxItems": 3,
                            "items": {"type": "array", "items": {"type": "number"},
                                      "minItems": 2, "maxItems": 2}},
                "amplitude": {"type": "number", "minimum": 0},
                "curvature": {"type": "number"},
                "map_degree": _POS_INT,
                "seed": {"type": "integer"},
                "periodic": {"type": "array", "items": {"type": "boolean"}},
            },
        },
        "law": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fields": {"type": "array", "minItems": 1, "uniqueItems": True,
                           "items": {"enum": ["a", "b", "c"]}},
                "gamma": {"type": "number", "exclusiveMinimum": 1},
                "mach": _POS_NUM,
                "eps": {"type": "number"},
                "rc": _POS_NUM,
            },
        },
        "p": {"type": "array", "items": _POS_INT, "minItems": 1},
        "dt": {"type": "array", "items": _POS_NUM, "minItems": 1},
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"scheme": {"enum": list(SCHEMES)}, "steps": _POS_INT},
        },
        "preconditioners": {"type": "array", "minItems": 1, "uniqueItems": True,
                            "items": {"enum": list(PRECONDITIONERS)}},
        "gmres": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rtol": _POS_NUM, "restart": _POS_INT,
                           "max_iterations": _POS_INT, "side": {"enum": ["left", "right"]}},
        },
        "newton": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rtol": _POS_NUM, "atol": {"type": "number", "minimum": 0},
                           "max_iterations": _POS_INT, "patience": _POS_INT},
        },
        "ksvd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"terms": {"enum": [1, 2]}, "max_iterations": _POS_INT},
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rule": {"enum": ["gauss", "gauss_lobatto"]},
                           "extra_points": {"type": "integer", "minimum": 0}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "history": {"type": "boolean"}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "workers": _POS_INT,
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"repeats": {"type": "integer", "minimum": 5},
                           "warmup": {"type": "integer", "minimum": 1}},
        },
        "converge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sweep": {"enum": ["p", "mesh", "dt"]},
                "scheme": {"enum": list(SCHEMES)},
                "dt": _POS_NUM,
                "final_time": {"type": "number", "minimum": 0},
                "meshes": {"type": "array", "minItems": 1,
                           "items": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 3}},
                "dts": {"type": "array", "minItems": 1, "items": _POS_NUM},
                "reference": {"enum": ["exact", "fine"]},
                "reference_dt": _POS_NUM,
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _field_path(err) -> str:
    parts = [str(x) for x in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description.

    Attributes mirror the JSON keys; nested sections are kept as plain
    dicts with defaults filled in.
    """

    case: str
    p: tuple
    dt: tuple = (0.01,)
    name: str = ""
    mesh: dict = field(default_factory=dict)
    law: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=lambda: {"scheme": "backward_euler", "steps": 1})
    preconditioners: tuple = ("jacobi_full", "ksvd_full")
    gmres: dict = field(default_factory=dict)
    newton: dict = field(default_factory=dict)
    ksvd: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=lambda: {"rule": "gauss", "extra_points": 1})
    output: dict = field(default_factory=lambda: {"dir": "out", "history": False})
    seed: int = 0
    workers: int = 1
    scan: dict = field(default_factory=lambda: {"repeats": 5, "warmup": 1})
    converge: dict = field(default_factory=dict)
    source: str = "<dict>"

    @property
    def label(self) -> str:
        return self.name or self.case

    @property
    def dimension(self) -> int:
        if "counts" in self.mesh:
            return len(self.mesh["counts"])
        return 3 if self.case == "euler_periodic_3d" else 2

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION}
        for k in ("name", "case", "mesh", "law", "p", "dt", "integrator", "preconditioners",
                  "gmres", "newton", "ksvd", "quadrature", "output", "seed", "workers", "scan", "converge"):
            v = getattr(self, k)
            doc[k] = list(v) if isinstance(v, tuple) else copy.deepcopy(v)
        return doc

    def replace(self, **kw) -> "ExperimentConfig":
        doc = self.to_dict()
        doc.update(kw)
        return parse_config(doc, self.source)


def _cross_checks(doc: dict, source: str):
    case = doc["case"]
    mesh = doc.get("mesh", {})
    d = len(mesh["counts"]) if "counts" in mesh else (3 if case == "euler_periodic_3d" else 2)
    if "extents" in mesh and len(mesh["extents"]) != d:
        raise ConfigError(f"{source}: mesh.extents: expected {d} intervals to match mesh.counts")
    if "periodic" in mesh and len(mesh["periodic"]) != d:
        raise ConfigError(f"{source}: mesh.periodic: expected {d} flags to match mesh.counts")
    for i, (a, b) in enumerate(mesh.get("extents", [])):
        if not b > a:
            raise ConfigError(f"{source}: mesh.extents.{i}: interval [{a}, {b}] is empty")
    law = doc.get("law", {})
    if "fields" in law and case != "advection":
        raise ConfigError(f"{source}: law.fields: only the advection case takes velocity fields")
    if case == "advection" and d == 3 and any(f != "a" for f in law.get("fields", ["a"])):
        raise ConfigError(f"{source}: law.fields: only field 'a' is defined in 3D")
    if case == "euler_vortex" and d != 2:
        raise ConfigError(f"{source}: mesh.counts: the vortex case is two-dimensional")
    if case == "euler_periodic_3d" and d != 3:
        raise ConfigError(f"{source}: mesh.counts: the periodic Euler case is three-dimensional")
    conv = doc.get("converge", {})
    if conv.get("sweep") == "dt" and conv.get("reference") == "fine" and "reference_dt" not in conv:
        raise ConfigError(f"{source}: converge.reference_dt: required with reference 'fine'")


def parse_config(doc, source: str = "<dict>") -> ExperimentConfig:
    """Validate a decoded JSON document and fill in defaults."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{_field_path(e)}: {e.message}" for e in errors]
        raise ConfigError(f"{source}: " + "; ".join(msgs))
    _cross_checks(doc, source)
    base = ExperimentConfig(case=doc["case"], p=())
    merged = {}
    for key in ("integrator", "quadrature", "output", "scan"):
        merged[key] = {**getattr(base, key), **doc.get(key, {})}
    conv = {"sweep": "p", "scheme": "rk4", "dt": 1e-3, "final_time": 0.0, "reference": "exact"}
    conv.update(doc.get("converge", {}))
    return ExperimentConfig(
        case=doc["case"],
        p=tuple(doc["p"]),
        dt=tuple(doc.get("dt", base.dt)),
        name=doc.get("name", ""),
        mesh=dict(doc.get("mesh", {})),
        law=dict(doc.get("law", {})),
        preconditioners=tuple(doc.get("preconditioners", base.preconditioners)),
        gmres=dict(doc.get("gmres", {})),
        newton=dict(doc.get("newton", {})),
        ksvd=dict(doc.get("ksvd", {})),
        seed=int(doc.get("seed", 0)),
        workers=int(doc.get("workers", 1)),
        converge=conv,
        source=source,
        **merged,
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    return parse_config(doc, str(path))
