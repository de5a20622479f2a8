"""Run configuration: JSON schema, validation and construction of model objects."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .dirac_core import FieldConfig, PhysicalConfig
from .distortion import DistortionError, DistortionParam, ScalingSpec
from .profiles import PROFILES, make_fields
from .radial import RadialGrid
from .resonances import RegionError, RegionQuery


class ConfigError(ValueError):
    """Schema or semantic violation; ``diagnostics`` lists one entry per problem."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COMPLEX = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_REGION = {
    "type": "object",
    "properties": {"re_min": _NUM, "re_max": _NUM, "im_min": _NUM, "im_max": _NUM},
    "required": ["re_min", "re_max", "im_min", "im_max"],
    "additionalProperties": False,
}
_LAMBDAS = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 2}},
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
        {"type": "array", "items": _NUM, "minItems": 2},
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "drk run configuration",
    "type": "object",
    "properties": {
        "physical": {
            "type": "object",
            "properties": {"m": _POS, "c": _POS, "e": {"type": "number", "exclusiveMaximum": 0}},
            "additionalProperties": False,
        },
        "field": {
            "type": "object",
            "properties": {"profile": {"type": "string"}, "params": {"type": "object"}},
            "required": ["profile"],
            "additionalProperties": False,
        },
        "distortion": {
            "type": "object",
            "properties": {
                "thetas": {"type": "array", "items": _COMPLEX, "minItems": 2, "maxItems": 3},
                "R0": _POS,
                "K_radius": _POS,
                "epsilon": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
            "required": ["thetas", "R0", "K_radius"],
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {
                "r_max": _POS,
                "N": {"type": "integer", "minimum": 64},
                "degree": {"type": "integer", "minimum": 2},
                "stretch": {"type": "number", "minimum": 1},
                "max_stretch": {"type": "number", "minimum": 1},
                "scale_with_h": {"type": "boolean"},
            },
            "required": ["r_max", "N"],
            "additionalProperties": False,
        },
        "h_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "minItems": 1},
        "workers": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "export_operators": {"type": "boolean"},
        "resonances": {
            "type": "object",
            "properties": {
                "region": _REGION,
                "tol": _POS,
                "cap": {"type": "integer", "minimum": 0},
                "refine_grid": {"type": "boolean"},
            },
            "required": ["region"],
            "additionalProperties": False,
        },
        "ssf": {
            "type": "object",
            "properties": {"lambdas": _LAMBDAS, "mollifier_width": {"type": "number", "minimum": 0}, "kappa_max": {"type": "integer", "minimum": 1}},
            "required": ["lambdas"],
            "additionalProperties": False,
        },
        "weyl": {
            "type": "object",
            "properties": {"lam": _NUM, "lam1": _NUM},
            "required": ["lam", "lam1"],
            "additionalProperties": False,
        },
        "breit-wigner": {
            "type": "object",
            "properties": {
                "region": _REGION,
                "tol": _POS,
                "isolation": _POS,
                "half_widths": _POS,
                "samples": {"type": "integer", "minimum": 20},
                "max_resonances": {"type": "integer", "minimum": 1},
            },
            "required": ["region"],
            "additionalProperties": False,
        },
        "count": {
            "type": "object",
            "properties": {
                "region": _REGION,
                "tol": _POS,
                "disk_center": _NUM,
                "rho_over_h": _POS,
                "cap": {"type": "integer", "minimum": 0},
            },
            "required": ["region", "disk_center"],
            "additionalProperties": False,
        },
        "trace": {
            "type": "object",
            "properties": {
                "phi": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["bump", "plateau"]},
                        "a": _NUM,
                        "b": _NUM,
                        "height": _NUM,
                        "ramp": _POS,
                    },
                    "required": ["kind", "a", "b"],
                    "additionalProperties": False,
                },
                "estimate_bias": {"type": "boolean"},
            },
            "required": ["phi"],
            "additionalProperties": False,
        },
        "parametrix": {
            "type": "object",
            "properties": {
                "n_points": {"type": "integer", "minimum": 1},
                "h_list": {"type": "array", "items": _POS, "minItems": 2},
                "reduced_model": {"type": "object"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["field"],
    "additionalProperties": False,
}

_REDUCED_KEYS = {
    "v0", "width", "m", "c", "e", "L", "t", "probe_x", "probe_xi", "points_per_wavelength",
    "steps_per_unit_time", "flow_steps_per_unit_time", "mode_cut",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with the derived model objects."""

    raw: dict
    physical: PhysicalConfig
    fields: FieldConfig
    h_list: tuple
    thetas: tuple = ()
    scaling: Optional[ScalingSpec] = None
    epsilon: float = 0.75
    grid: Optional[dict] = None
    workers: Optional[int] = None
    seed: int = 0
    output_dir: str = "drk-out"
    sections: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def physics(self, h: float) -> PhysicalConfig:
        return self.physical.with_h(h)

    def grid_for(self, h: float) -> Optional[RadialGrid]:
        """Radial grid at h; with ``scale_with_h`` the node count grows like 1/h."""
        if self.grid is None:
            return None
        g = dict(self.grid)
        scale = g.pop("scale_with_h", False)
        if scale:
            g["N"] = int(math.ceil(g["N"] / h))
        bps = tuple(self.fields.radial.breakpoints) if self.fields.radial is not None else ()
        return RadialGrid(breakpoints=bps, **g)

    def region(self, section: str) -> RegionQuery:
        r = self.sections[section]["region"]
        return RegionQuery(r["re_min"], r["re_max"], r["im_min"], r["im_max"])

    def theta_validation(self) -> complex:
        """The theta of smallest modulus; its curve lies closest to the real axis."""
        return min(self.thetas, key=abs)


def config_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def load_config(path) -> RunConfig:
    """Read, schema-check and build a RunConfig; raises ConfigError with diagnostics."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {p}: {exc.strerror}"]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: invalid JSON ({exc.msg})"]) from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        diags = []
        for e in errors:
            where = _path(e)
            key = str(e.absolute_path[-1]) if e.absolute_path else None
            line = _line_of(text, key) if key and not key.isdigit() else None
            prefix = f"line {line}, " if line else ""
            diags.append(f"{prefix}field {where}: {e.message}")
        raise ConfigError(diags)
    return build_config(raw)


def build_config(raw: dict) -> RunConfig:
    """Semantic checks on an already schema-valid dict."""
    diags: list[str] = []
    phys_kw = raw.get("physical", {})
    h_list = tuple(float(h) for h in raw.get("h_list", [1.0]))
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        diags.append("field h_list: must be strictly decreasing")
    try:
        physical = PhysicalConfig(h=h_list[0], **phys_kw)
    except ValueError as exc:
        diags.append(f"field physical: {exc}")
        physical = PhysicalConfig()
    fdef = raw["field"]
    name = fdef["profile"]
    fields = FieldConfig()
    if name != "free" and name not in PROFILES:
        diags.append(f"field field.profile: unknown profile {name!r}; known: {sorted(['free', *PROFILES])}")
    else:
        try:
            fields = make_fields(name, **fdef.get("params", {}))
        except (TypeError, ValueError) as exc:
            diags.append(f"field field.params: {exc}")
    thetas: tuple = ()
    scaling = None
    epsilon = 0.75
    if "distortion" in raw:
        d = raw["distortion"]
        epsilon = float(d.get("epsilon", 0.75))
        thetas = tuple(complex(t[0], t[1]) for t in d["thetas"])
        try:
            scaling = ScalingSpec(float(d["R0"]), float(d["K_radius"]))
            for th in thetas:
                DistortionParam(th, epsilon)
        except DistortionError as exc:
            diags.append(f"field distortion: {exc}")
        if len(set(thetas)) != len(thetas):
            diags.append("field distortion.thetas: values must be distinct")
    sections = {k: raw[k] for k in ("resonances", "ssf", "weyl", "breit-wigner", "count", "trace", "parametrix") if k in raw}
    for sec in ("resonances", "breit-wigner", "count"):
        if sec in sections:
            if scaling is None:
                diags.append(f"field {sec}: needs a distortion section")
                continue
            r = sections[sec]["region"]
            try:
                q = RegionQuery(r["re_min"], r["re_max"], r["im_min"], r["im_max"])
                q.validate(min(thetas, key=abs), physical)
            except RegionError as exc:
                diags.append(f"field {sec}.region: {exc}")
    if "weyl" in sections:
        w = sections["weyl"]
        lo, hi = sorted((w["lam"], w["lam1"]))
        mc2 = physical.mc2
        if lo < mc2 < hi or lo < -mc2 < hi or lo == hi:
            diags.append("field weyl: lam and lam1 must differ and not straddle +-mc^2")
    if "trace" in sections:
        phi = sections["trace"]["phi"]
        if not phi["b"] > phi["a"]:
            diags.append("field trace.phi: need b > a")
    if "parametrix" in sections:
        rm = sections["parametrix"].get("reduced_model", {})
        bad = sorted(set(rm) - _REDUCED_KEYS)
        if bad:
            diags.append(f"field parametrix.reduced_model: unknown keys {bad}")
        hl = sections["parametrix"].get("h_list", [])
        if any(b >= a for a, b in zip(hl, hl[1:])):
            diags.append("field parametrix.h_list: must be strictly decreasing")
    if diags:
        raise ConfigError(diags)
    return RunConfig(
        raw=raw,
        physical=physical,
        fields=fields,
        h_list=h_list,
        thetas=thetas,
        scaling=scaling,
        epsilon=epsilon,
        grid=raw.get("grid"),
        workers=raw.get("workers"),
        seed=int(raw.get("seed", 0)),
        output_dir=raw.get("output_dir", "drk-out"),
        sections=sections,
    )
