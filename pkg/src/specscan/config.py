"""Pipeline configuration file.

One JSON document with optional sections ``geometry``, ``instrument``,
``planning``, ``preprocess`` and ``simulation``. Every problem found is
reported together in a single :class:`ConfigError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .kinematics import PlatformGeometry
from .planning import PlanConfig
from .pointcloud import CropBox
from .simulator import SimConfig
from .spectral import Instrument

SECTIONS = ("geometry", "instrument", "planning", "preprocess", "simulation")


@dataclass(frozen=True)
class PreprocessConfig:
    crop: CropBox | None = None
    plane_dist: float = 0.005
    ransac_iters: int = 1000
    cluster_eps: float = 0.01
    cluster_min_points: int = 10


@dataclass(frozen=True)
class PipelineConfig:
    geometry: PlatformGeometry = field(default_factory=PlatformGeometry)
    instrument: Instrument = field(default_factory=Instrument)
    planning: PlanConfig = field(default_factory=PlanConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    simulation: SimConfig = field(default_factory=SimConfig)


def _build(section, factory, data, problems):
    try:
        return factory(data)
    except (TypeError, ValueError, KeyError) as exc:
        problems.append(f"{section}: {exc}")
        return None


def _preprocess(d):
    d = dict(d)
    crop = d.pop("crop", None)
    known = {f.name for f in fields(PreprocessConfig)} - {"crop"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown keys: {', '.join(unknown)}")
    box = None if crop is None else CropBox(tuple(crop["min"]), tuple(crop["max"]))
    cfg = PreprocessConfig(crop=box, **d)
    bad = []
    if not cfg.plane_dist > 0:
        bad.append("plane_dist must be positive")
    if cfg.ransac_iters < 1:
        bad.append("ransac_iters must be at least 1")
    if not cfg.cluster_eps > 0:
        bad.append("cluster_eps must be positive")
    if cfg.cluster_min_points < 1:
        bad.append("cluster_min_points must be at least 1")
    if bad:
        raise ValueError("; ".join(bad))
    return cfg


def _simulation(d, instrument):
    known = {f.name for f in fields(SimConfig)} - {"instrument"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown keys: {', '.join(unknown)}")
    cfg = SimConfig(instrument=instrument or Instrument(), **d)
    bad = cfg.validate()
    if bad:
        raise ValueError("; ".join(bad))
    return cfg


def parse_config(data):
    if not isinstance(data, dict):
        raise ConfigError(["config root must be a JSON object"])
    problems = [f"unknown section {k!r}" for k in sorted(set(data) - set(SECTIONS))]
    geom = _build("geometry", PlatformGeometry.from_dict, data.get("geometry", {}), problems)
    inst = _build("instrument", Instrument.from_dict, data.get("instrument", {}), problems)
    plan = _build("planning", PlanConfig.from_dict, data.get("planning", {}), problems)
    pre = _build("preprocess", _preprocess, data.get("preprocess", {}), problems)
    sim = _build("simulation", lambda d: _simulation(d, inst), data.get("simulation", {}), problems)
    if problems:
        raise ConfigError(problems)
    return PipelineConfig(geom, inst, plan, pre, sim)


def load_config(path=None):
    if path is None:
        return PipelineConfig()
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    return parse_config(data)
