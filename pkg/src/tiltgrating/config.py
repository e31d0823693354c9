"""Run configuration: one JSON document, schema-checked, with presets.

Angles are degrees in the file and radians everywhere else. The config
hash covers only the physical blocks (geometry, beam, surface, trimer)
after presets are expanded, so it changes exactly when a physical
parameter does.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import jsonschema

from .constants import HELIUM4_MASS_U, C3_HELIUM_SINX
from .errors import ConfigError
from .geometry import Beam, GratingGeometry
from .surface import SurfacePotentialParams
from .trimer_model import HE3_EXCITED_MEAN_R, HE3_GROUND_MEAN_R, make_model

GEOMETRY_PRESETS = {
    "standard": {"period_d_nm": 100.0, "slit_width_s0_nm": 60.0, "thickness_t_nm": 120.0, "wedge_angle_beta_deg": 6.0},
}
TRIMER_PRESETS = {
    "he3-ground": {"family": "gaussian", "mean_r_nm": HE3_GROUND_MEAN_R},
    "he3-excited": {"family": "gaussian", "mean_r_nm": HE3_EXCITED_MEAN_R},
}
SPECIES_MASS_U = {"helium": HELIUM4_MASS_U}

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["beam"],
    "properties": {
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": sorted(GEOMETRY_PRESETS)},
                "period_d_nm": _pos,
                "slit_width_s0_nm": _pos,
                "thickness_t_nm": _nonneg,
                "wedge_angle_beta_deg": {"type": "number", "minimum": 0, "exclusiveMaximum": 90},
                "n_bars": {"type": "integer", "minimum": 1},
            },
        },
        "beam": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "species": {"enum": sorted(SPECIES_MASS_U)},
                "atom_mass_u": _pos,
                "speed_m_s": _pos,
                "velocities_m_s": {"type": "array", "items": _pos, "minItems": 1},
                "theta_deg": {"type": "number", "exclusiveMinimum": -90, "exclusiveMaximum": 90},
            },
        },
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"C3_meV_nm3": _nonneg},
        },
        "trimer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": sorted(TRIMER_PRESETS)},
                "family": {"enum": ["gaussian", "exponential"]},
                "mean_r_nm": _pos,
            },
        },
        "orders": {
            "type": "object",
            "additionalProperties": False,
            "required": ["min", "max"],
            "properties": {"min": {"type": "integer"}, "max": {"type": "integer"}},
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 16},
                "vdw_count": {"type": "integer", "minimum": 16},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "method": {"enum": ["exact", "cumulant", "both"]},
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "required": ["variable", "values"],
            "properties": {
                "variable": {"enum": ["theta", "v", "w"]},
                "values": {"type": "array", "items": {"type": "number"}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "stamp": {"type": "boolean"}},
        },
    },
}


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    geometry: GratingGeometry
    beams: tuple
    surface: SurfacePotentialParams
    trimer: object  # TrimerWaveModel or None
    orders: tuple
    mc_count: int
    vdw_count: int
    workers: int
    seed: int
    method: str
    scan: dict | None
    out_dir: str
    stamp: bool

    @property
    def kind(self):
        return "atom" if self.trimer is None else "trimer"

    @property
    def beam(self):
        return self.beams[0]

    def physical(self):
        return physical_blocks(self.raw)

    def config_hash(self):
        return config_hash(self.raw)

    def with_overrides(self, **kw):
        raw = copy.deepcopy(self.raw)
        for key, value in kw.items():
            if value is None:
                continue
            if key == "seed":
                raw["seed"] = int(value)
            elif key == "orders":
                raw["orders"] = {"min": int(value[0]), "max": int(value[1])}
            elif key == "method":
                raw["method"] = value
            elif key == "out_dir":
                raw.setdefault("output", {})["dir"] = value
            elif key == "workers":
                raw.setdefault("mc", {})["workers"] = int(value)
            elif key == "stamp":
                raw.setdefault("output", {})["stamp"] = bool(value)
            else:
                raise ConfigError(f"unknown override {key}")
        return load_config(raw)


def _expand(raw):
    """Copy of ``raw`` with presets replaced by their values and defaults filled."""
    cfg = copy.deepcopy(raw)
    g = cfg.get("geometry", {"preset": "standard"})
    if "preset" in g:
        base = dict(GEOMETRY_PRESETS[g.pop("preset")])
        base.update(g)
        g = base
    g.setdefault("n_bars", 100)
    missing = {"period_d_nm", "slit_width_s0_nm", "thickness_t_nm", "wedge_angle_beta_deg"} - set(g)
    if missing:
        raise ConfigError(f"geometry is missing {sorted(missing)}")
    cfg["geometry"] = g
    b = cfg["beam"]
    if "species" in b and "atom_mass_u" in b:
        raise ConfigError("give either beam.species or beam.atom_mass_u")
    b["atom_mass_u"] = b.pop("atom_mass_u", SPECIES_MASS_U[b.pop("species", "helium")])
    if ("speed_m_s" in b) == ("velocities_m_s" in b):
        raise ConfigError("give exactly one of beam.speed_m_s and beam.velocities_m_s")
    if "speed_m_s" in b:
        b["velocities_m_s"] = [b.pop("speed_m_s")]
    b.setdefault("theta_deg", 0.0)
    cfg["surface"] = {"C3_meV_nm3": cfg.get("surface", {}).get("C3_meV_nm3", C3_HELIUM_SINX)}
    t = cfg.get("trimer")
    if t is not None:
        if "preset" in t:
            base = dict(TRIMER_PRESETS[t.pop("preset")])
            base.update(t)
            t = base
        t.setdefault("family", "gaussian")
        if "mean_r_nm" not in t:
            raise ConfigError("trimer block needs mean_r_nm or a preset")
        cfg["trimer"] = t
    return cfg


def physical_blocks(raw):
    cfg = _expand(raw)
    return {k: cfg[k] for k in ("geometry", "beam", "surface", "trimer") if k in cfg}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(raw):
    return hashlib.sha256(canonical_json(physical_blocks(raw)).encode()).hexdigest()[:16]


def load_config(source):
    """Validate and resolve a config given as a dict, a JSON string or a path."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = source
        if not str(source).lstrip().startswith("{"):
            try:
                with open(source) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {source}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    cfg = _expand(raw)
    g = cfg["geometry"]
    geom = GratingGeometry(
        g["period_d_nm"], g["slit_width_s0_nm"], g["thickness_t_nm"], math.radians(g["wedge_angle_beta_deg"]), g["n_bars"]
    )
    t = cfg.get("trimer")
    model = make_model(t["family"], None, t["mean_r_nm"]) if t else None
    b = cfg["beam"]
    mass = 3 * b["atom_mass_u"] if model is not None else b["atom_mass_u"]
    theta = math.radians(b["theta_deg"])
    beams = tuple(Beam(mass, float(v), theta) for v in b["velocities_m_s"])
    o = cfg.get("orders", {"min": -10, "max": 10})
    if o["min"] > o["max"]:
        raise ConfigError("orders.min exceeds orders.max")
    mc = cfg.get("mc", {})
    from .trimer import DEFAULT_MC_COUNT, DEFAULT_VDW_COUNT

    out = cfg.get("output", {})
    return RunConfig(
        raw=raw,
        geometry=geom,
        beams=beams,
        surface=SurfacePotentialParams(cfg["surface"]["C3_meV_nm3"]),
        trimer=model,
        orders=(o["min"], o["max"]),
        mc_count=mc.get("count", DEFAULT_MC_COUNT),
        vdw_count=mc.get("vdw_count", DEFAULT_VDW_COUNT),
        workers=mc.get("workers", 1),
        seed=cfg.get("seed", 0),
        method=cfg.get("method", "both"),
        scan=cfg.get("scan"),
        out_dir=out.get("dir", "out"),
        stamp=out.get("stamp", False),
    )
