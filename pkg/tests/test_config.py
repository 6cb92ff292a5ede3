import json

import pytest

from specscan.config import PipelineConfig, load_config, parse_config
from specscan.errors import ConfigError


def test_defaults():
    cfg = load_config(None)
    assert isinstance(cfg, PipelineConfig)
    assert cfg.planning.scan_dist == 0.03
    assert cfg.simulation.instrument.numerical_aperture == 0.5


def test_sections_parsed(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "geometry": {"horn_length_m": 0.018},
        "instrument": {"NA": 0.22, "bins": 64},
        "planning": {"voxel_size": 0.02, "order": "cloud"},
        "preprocess": {"crop": {"min": [-1, -1, -1], "max": [1, 1, 1]}, "cluster_eps": 0.02},
        "simulation": {"distance_rule": "mean"},
    }))
    cfg = load_config(path)
    assert cfg.geometry.horn_length == 0.018
    assert cfg.simulation.instrument.bins == 64
    assert cfg.planning.order == "cloud"
    assert cfg.preprocess.crop.hi == (1.0, 1.0, 1.0)
    assert cfg.simulation.distance_rule == "mean"


def test_all_problems_reported_together():
    with pytest.raises(ConfigError) as err:
        parse_config({
            "geometry": {"arm_length_m": 0.01},
            "instrument": {"NA": 1.5},
            "planning": {"voxel_size": -1},
            "preprocess": {"plane_dist": 0},
            "simulation": {"weighting": "magic"},
            "extra": {},
        })
    text = str(err.value)
    for key in ("geometry", "instrument", "planning", "preprocess", "simulation", "extra"):
        assert key in text
    assert len(err.value.problems) == 6


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)
