"""Scenario configuration: a nested dataclass schema with strict JSON loading.

Unknown keys and mistyped values are rejected. Powers are given in dBm in the
file and exposed in Watts via properties, so the conversion happens in one place.
Overrides use dotted paths, e.g. ``counts.cavs=8`` or ``marl.gamma_long=0.9``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .channel import dbm_to_watt


class ConfigError(ValueError):
    pass


@dataclass
class Counts:
    cavs: int = 6
    hdvs: int = 2
    rsus: int = 2
    lanes: int = 2
    subcarriers: int = 4      # K: targets served (and subcarriers) per RSU
    antennas: int = 8         # M
    cluster_size: int = 2     # RSUs serving each vehicle


@dataclass
class Geometry:
    lane_width: float = 4.0
    road_length: float = 300.0      # ring circumference
    rsu_offset: float = 10.0        # lateral distance of RSUs from the road edge
    rsu_height: float = 15.0
    vehicle_length: float = 4.0
    standstill_gap: float = 2.0     # d_0
    initial_speed_min: float = 10.0
    initial_speed_max: float = 15.0


@dataclass
class Timing:
    long_slot: float = 1.0          # Delta
    short_slot: float = 0.1         # delta
    short_per_long: int = 10        # T
    long_steps: int = 10            # slow slots per episode
    episodes: int = 50
    eval_episodes: int = 5
    substep: float = 0.005          # Euler substep for the actuator lag
    checkpoint_every: int = 0       # 0: only a final checkpoint


@dataclass
class Physics:
    p_max_dbm: float = 23.0
    noise_dbm: float = -114.0           # communication noise sigma_c^2
    sensing_noise_dbm: float = -114.0   # echo noise sigma_k^2 and sigma_m^2
    carrier: float = 28e9
    gain_ref: float = 1.0
    rcs: float = 1.0
    matched_gain: float = 16.0
    rho: float = 1.0
    rho_v: float = 1.0
    actuation_lag: float = 0.02
    time_gap: float = 1.0
    u_max: float = 5.0
    alpha_max: float = 0.01
    speed_max: float = 40.0
    accel_min: float = -3.0
    react_time: float = 1.0
    brake_decel: float = 3.0
    hdv_desired_speed: float = 15.0

    @property
    def p_max(self) -> float:
        return dbm_to_watt(self.p_max_dbm)

    @property
    def noise(self) -> float:
        return dbm_to_watt(self.noise_dbm)

    @property
    def sensing_noise(self) -> float:
        return dbm_to_watt(self.sensing_noise_dbm)


@dataclass
class Thresholds:
    neighbor_gap: float = 100.0     # Delta q_th
    voi_threshold: float = 0.05     # DL_th, bits
    voi_threshold_short: Optional[float] = None  # separate short-term threshold if set
    min_rate: float = 1.0           # C_v, bit/s/Hz
    ttc_cap: float = 20.0
    ttc_eps: float = 1e-3


@dataclass
class Marl:
    hidden: list = field(default_factory=lambda: [256, 256])
    gamma_long: float = 0.95
    gamma_short: float = 0.0
    tau: float = 0.005
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    batch_size: int = 64
    learn_start: int = 640
    learn_every: int = 1
    update_interval: int = 10
    long_replay_steps: int = 10
    buffer_long: int = 10_000
    buffer_short: int = 1_000_000
    noise_start: float = 0.3
    noise_end: float = 0.02
    centralized_critic: bool = True
    voi_slots: int = 2
    voi_every: int = 10             # E_sel
    voi_samples: int = 1000         # F
    voi_min_samples: int = 100
    voi_log: int = 2000
    request_cost: float = 0.01
    perception_weight: float = 0.1
    lane_weight: float = 1.0


SECTIONS = {"counts": Counts, "geometry": Geometry, "timing": Timing, "physics": Physics,
            "thresholds": Thresholds, "marl": Marl}


@dataclass
class ScenarioConfig:
    counts: Counts = field(default_factory=Counts)
    geometry: Geometry = field(default_factory=Geometry)
    timing: Timing = field(default_factory=Timing)
    physics: Physics = field(default_factory=Physics)
    thresholds: Thresholds = field(default_factory=Thresholds)
    marl: Marl = field(default_factory=Marl)
    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        c, t, g = self.counts, self.timing, self.geometry
        for name in ("cavs", "rsus", "lanes", "subcarriers", "antennas", "cluster_size"):
            if getattr(c, name) < 1:
                raise ConfigError(f"counts.{name} must be >= 1")
        if c.hdvs < 0:
            raise ConfigError("counts.hdvs must be >= 0")
        if c.cluster_size > c.rsus:
            raise ConfigError("counts.cluster_size exceeds counts.rsus")
        if t.short_per_long < 1 or t.long_steps < 1 or t.episodes < 0 or t.eval_episodes < 0:
            raise ConfigError("timing counts must be positive")
        if t.short_slot <= 0 or t.long_slot <= 0 or t.substep <= 0:
            raise ConfigError("time steps must be positive")
        if t.short_slot * t.short_per_long > t.long_slot + 1e-12:
            raise ConfigError("short_slot * short_per_long exceeds long_slot")
        if g.road_length <= 0 or g.lane_width <= 0 or g.vehicle_length <= 0:
            raise ConfigError("geometry lengths must be positive")
        if g.initial_speed_min > g.initial_speed_max:
            raise ConfigError("initial speed range inverted")
        m = self.marl
        if not 0 <= m.gamma_long < 1 or not 0 <= m.gamma_short < 1:
            raise ConfigError("discount factors must lie in [0, 1)")
        if not 0 < m.tau < 1:
            raise ConfigError("marl.tau must lie in (0, 1)")
        if not m.hidden or any(int(h) < 1 for h in m.hidden):
            raise ConfigError("marl.hidden must list positive widths")
        if m.voi_samples < 100:
            raise ConfigError("marl.voi_samples must be >= 100")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _coerce(value: Any, current: Any, where: str) -> Any:
    """Check ``value`` against the type of the default ``current``."""
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if isinstance(current, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if isinstance(current, float) or current is None:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            v = float(value)
            if not math.isfinite(v):
                raise ConfigError(f"{where}: must be finite")
            return v
        if value is None and current is None:
            return None
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(current, list):
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return list(value)
        raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
    raise ConfigError(f"{where}: unsupported field type")


def from_dict(data: Mapping) -> ScenarioConfig:
    cfg = ScenarioConfig()
    for key, value in data.items():
        if key == "seed":
            cfg.seed = _coerce(value, 0, "seed")
            continue
        if key not in SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, Mapping):
            raise ConfigError(f"section {key!r} must be an object")
        section = getattr(cfg, key)
        for name, v in value.items():
            if not hasattr(section, name) or name.startswith("_"):
                raise ConfigError(f"unknown key {key}.{name}")
            setattr(section, name, _coerce(v, getattr(section, name), f"{key}.{name}"))
    return cfg.validate()


def parse_override(text: str) -> tuple[str, Any]:
    """``a.b=value``; the value is read as JSON, falling back to a bare string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(data: dict, overrides) -> dict:
    out = json.loads(json.dumps(data))
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        parts = key.split(".")
        if len(parts) == 1 and parts[0] == "seed":
            out["seed"] = value
            continue
        if len(parts) != 2 or parts[0] not in SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        if parts[1] not in {f.name for f in dataclasses.fields(SECTIONS[parts[0]])}:
            raise ConfigError(f"unknown config key {key!r}")
        out.setdefault(parts[0], {})[parts[1]] = value
    return out


def load_config(path: Optional[Union[str, Path]] = None, overrides=(),
                seed: Optional[int] = None) -> ScenarioConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    return from_dict(data)
