"""Scenario configuration: defaults, validation and YAML loading.

Config files are YAML mappings with a ``config_version`` key and one nested
section per concern (``scene``, ``targets``, ``sensing``, ``network``,
``run``).  Every key of a section maps onto a :class:`ScenarioConfig` field
of the same name; unknown keys are rejected.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

CONFIG_VERSION = 1

POLICY_NAMES = ("centralized-aoi", "distributed-aoii", "ucb", "random", "round-robin")

SECTIONS: dict[str, tuple[str, ...]] = {
    "scene": (
        "node_density",
        "target_density",
        "region_width_km",
        "region_height_km",
        "disk_area_km2",
        "wrap",
    ),
    "targets": (
        "speed_min_mps",
        "speed_max_mps",
        "turn_rate_min",
        "turn_rate_max",
        "p_stay_cv_range",
        "p_stay_ct_range",
        "process_noise_mps2",
        "birth_rate",
        "mean_lifetime_s",
        "dt",
    ),
    "sensing": (
        "p_detection",
        "p_false_alarm",
        "n_cells",
        "sigma0_m",
        "sigma_max_m2",
        "gate_sigma",
        "local_drop_steps",
        "tentative_drop_steps",
        "transition_prior",
    ),
    "network": (
        "capacity",
        "max_age",
        "alpha_avail",
        "gamma_discount",
        "match_radius_m",
    ),
    "run": ("steps", "replications", "seed", "policies", "workers"),
}


class ConfigError(ValueError):
    """Raised for invalid or malformed scenario configurations."""


@dataclass(frozen=True)
class ScenarioConfig:
    # scene
    node_density: float = 0.2
    target_density: float = 0.3
    region_width_km: float = 10.0
    region_height_km: float = 10.0
    disk_area_km2: float = 10.0
    wrap: bool = True
    # targets
    speed_min_mps: float = 10.0
    speed_max_mps: float = 30.0
    turn_rate_min: float = 0.2
    turn_rate_max: float = 0.5
    p_stay_cv_range: tuple[float, float] = (0.7, 0.9)
    p_stay_ct_range: tuple[float, float] = (0.5, 0.7)
    process_noise_mps2: float = 0.5
    birth_rate: float = 0.0
    mean_lifetime_s: float = math.inf
    dt: float = 1.0
    # sensing
    p_detection: float = 1.0
    p_false_alarm: float = 0.0
    n_cells: int = 100
    sigma0_m: float = 5.0
    sigma_max_m2: float = 1e6
    gate_sigma: float = 3.0
    local_drop_steps: int = 10
    tentative_drop_steps: int = 3
    transition_prior: tuple[tuple[float, float], tuple[float, float]] = ((0.8, 0.2), (0.4, 0.6))
    # network
    capacity: float = 2.0
    max_age: int = 30
    alpha_avail: float = 0.5
    gamma_discount: float = 0.5
    match_radius_m: float = 500.0
    # run
    steps: int = 1000
    replications: int = 120
    seed: int = 20240601
    policies: tuple[str, ...] = POLICY_NAMES
    workers: int = 1

    def __post_init__(self) -> None:
        # YAML hands back lists; normalise so the config stays hashable.
        object.__setattr__(self, "p_stay_cv_range", tuple(float(v) for v in self.p_stay_cv_range))
        object.__setattr__(self, "p_stay_ct_range", tuple(float(v) for v in self.p_stay_ct_range))
        object.__setattr__(
            self, "transition_prior", tuple(tuple(float(v) for v in row) for row in self.transition_prior)
        )
        object.__setattr__(self, "policies", tuple(self.policies))
        self.validate()

    # derived quantities -------------------------------------------------
    @property
    def region_area_km2(self) -> float:
        return self.region_width_km * self.region_height_km

    @property
    def disk_radius_km(self) -> float:
        return math.sqrt(self.disk_area_km2 / math.pi)

    @property
    def alpha(self) -> float:
        """Per-node update rate C / (lambda_n |B|)."""
        denom = self.node_density * self.region_area_km2
        return self.capacity / denom if denom > 0 else 0.0

    @property
    def sigma0_km(self) -> float:
        return self.sigma0_m / 1000.0

    def validate(self) -> None:
        if self.node_density < 0 or self.target_density < 0:
            raise ConfigError("densities must be >= 0")
        if self.region_width_km <= 0 or self.region_height_km <= 0:
            raise ConfigError("region dimensions must be > 0")
        if self.disk_area_km2 <= 0:
            raise ConfigError("disk_area_km2 must be > 0")
        if not 0.0 <= self.p_detection <= 1.0:
            raise ConfigError("p_detection must lie in [0, 1]")
        if not 0.0 <= self.p_false_alarm <= 1.0:
            raise ConfigError("p_false_alarm must lie in [0, 1]")
        if self.capacity < 0:
            raise ConfigError("capacity must be >= 0")
        if self.speed_min_mps < 0 or self.speed_max_mps < self.speed_min_mps:
            raise ConfigError("speed range must satisfy 0 <= min <= max")
        if not 0.0 <= self.turn_rate_min <= self.turn_rate_max:
            raise ConfigError("turn rates must satisfy 0 <= turn_rate_min <= turn_rate_max")
        for name in ("p_stay_cv_range", "p_stay_ct_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi <= 1")
        for row in self.transition_prior:
            if abs(sum(row) - 1.0) > 1e-9 or min(row) < 0:
                raise ConfigError("transition_prior rows must be probability vectors")
        if self.max_age < 1:
            raise ConfigError("max_age must be >= 1")
        if not 0.0 <= self.alpha_avail <= 1.0 or not 0.0 <= self.gamma_discount <= 1.0:
            raise ConfigError("alpha_avail and gamma_discount must lie in [0, 1]")
        if self.steps < 1 or self.replications < 1:
            raise ConfigError("steps and replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.birth_rate < 0 or self.mean_lifetime_s <= 0:
            raise ConfigError("birth_rate must be >= 0 and mean_lifetime_s > 0")
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        unknown = [p for p in self.policies if p not in POLICY_NAMES]
        if unknown:
            raise ConfigError(f"unknown policies {unknown}; choose from {list(POLICY_NAMES)}")

    def with_overrides(self, **changes: Any) -> "ScenarioConfig":
        return replace(self, **changes)

    # serialisation --------------------------------------------------------
    def to_nested(self) -> dict[str, Any]:
        flat = asdict(self)
        out: dict[str, Any] = {"config_version": CONFIG_VERSION}
        for section, keys in SECTIONS.items():
            out[section] = {k: _plain(flat[k]) for k in keys}
        return out


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def from_nested(data: dict[str, Any]) -> ScenarioConfig:
    """Build a config from a parsed nested mapping."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    version = data.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version!r} (expected {CONFIG_VERSION})")
    known = {f.name for f in fields(ScenarioConfig)}
    kwargs: dict[str, Any] = {}
    for section, body in data.items():
        if section == "config_version":
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if body is None:
            continue
        for key, value in body.items():
            if key not in SECTIONS[section] or key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            if value == "inf":
                value = math.inf
            kwargs[key] = value
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return from_nested(data)


def dump_config(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_nested(), sort_keys=False))
