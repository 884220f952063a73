from __future__ import annotations

import math
from pathlib import Path

import pytest
import yaml

from crnsim.config import CONFIG_VERSION, ConfigError, ScenarioConfig, dump_config, from_nested, load_config

DEFAULT_YAML = Path(__file__).resolve().parents[1] / "configs" / "default.yaml"


def test_default_yaml_matches_defaults():
    assert load_config(DEFAULT_YAML) == ScenarioConfig()


def test_round_trip(tmp_path):
    cfg = ScenarioConfig(capacity=1.5, seed=9, policies=("ucb", "random"), p_stay_cv_range=(0.75, 0.8))
    path = tmp_path / "c.yaml"
    dump_config(cfg, path)
    assert load_config(path) == cfg


def test_infinite_lifetime_round_trips(tmp_path):
    path = tmp_path / "c.yaml"
    dump_config(ScenarioConfig(), path)
    assert math.isinf(load_config(path).mean_lifetime_s)


def test_partial_file_keeps_defaults():
    cfg = from_nested({"network": {"capacity": 3}})
    assert cfg.capacity == 3 and cfg.node_density == ScenarioConfig().node_density


def test_empty_file_is_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == ScenarioConfig()


@pytest.mark.parametrize(
    "data,match",
    [
        ({"network": {"capacty": 2}}, "unknown key"),
        ({"netwrk": {"capacity": 2}}, "unknown config section"),
        ({"scene": {"capacity": 2}}, "unknown key"),
        ({"config_version": CONFIG_VERSION + 1}, "config_version"),
        ({"network": {"capacity": -1}}, "capacity"),
        ({"sensing": {"p_detection": 1.5}}, "p_detection"),
        ({"run": {"policies": ["greedy"]}}, "unknown policies"),
        ({"targets": {"speed_min_mps": 30, "speed_max_mps": 10}}, "speed"),
        ({"run": {"steps": 0}}, "steps"),
        ([1, 2], "mapping"),
    ],
)
def test_invalid_configs_rejected(data, match):
    with pytest.raises(ConfigError, match=match):
        from_nested(data)


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("scene: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_derived_quantities():
    cfg = ScenarioConfig()
    assert cfg.region_area_km2 == 100.0
    assert cfg.alpha == pytest.approx(2.0 / 20.0)
    assert math.pi * cfg.disk_radius_km**2 == pytest.approx(10.0)
    assert ScenarioConfig(node_density=0.0).alpha == 0.0


def test_config_is_hashable_and_nested_is_plain():
    cfg = ScenarioConfig()
    hash(cfg)
    yaml.safe_dump(cfg.to_nested())
