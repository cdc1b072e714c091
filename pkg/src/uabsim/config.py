"""Run configuration: one immutable object holds every tunable of a run.

A config can be built from keyword overrides, from a flat ``key = value``
text file, or from the CLI (flags mirror the field names). The canonical
text serialization doubles as the reproducibility fingerprint: two runs
with equal ``config_hash()`` and equal seed must produce identical metrics.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

SAFETY_MODES = ("penalty", "flat_mask", "rank_mask")
LOS_MODES = ("stochastic", "expected")


@dataclass(frozen=True)
class SimConfig:
    # fleet and kinematics
    num_agents: int = 3
    altitude_m: float = 100.0
    speed_mps: float = 20.0
    timestep_s: float = 1.0
    fov_deg: float = 40.0
    num_beams: int = 9
    episode_len: int = 80
    area_width_m: float = 350.0
    area_height_m: float = 170.0
    # ground users (synthetic street-grid mobility)
    num_gues: int = 80
    block_size_m: float = 50.0
    vehicle_speed_mps: float = 10.0
    turn_prob: float = 0.25
    max_vehicle_speed_mps: float = 15.0
    # link budget
    fc_ghz: float = 30.0
    ptx_dbm: float = 14.0
    pn_dbm: float = -106.4
    gtx_db: float = 0.0
    grx_db: float = 38.0
    snr_th_db: float = -13.7
    los_mode: str = "stochastic"
    # service windows
    window_len: int = 10
    sat_threshold: int = 5
    # reward and safety
    lambda_s: float = 10.0
    lambda_c: float = 1000.0
    safety_mode: str = "rank_mask"
    d_th_m: float = 0.0  # 0 means "derive": twice the coverage radius
    # training schedule
    num_train_episodes: int = 1000
    eval_period: int = 20
    update_period: int = 1
    rng_seed: int = 0
    # learner
    hidden_sizes: tuple = (128, 128)
    gamma: float = 0.95
    learning_rate: float = 1e-4
    batch_size: int = 64
    buffer_capacity: int = 100_000
    eps_start: float = 1.0
    eps_final: float = 0.05
    eps_decay_frac: float = 0.5
    target_sync_period: int = 500
    grad_clip_norm: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.d_th_m == 0.0:
            derived = 2.0 * self.altitude_m * math.tan(math.radians(self.fov_deg) / 2.0)
            object.__setattr__(self, "d_th_m", derived)
        if isinstance(self.hidden_sizes, list):
            object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        self._validate()

    def _validate(self):
        c = self
        checks = [
            (c.num_agents >= 1, "num_agents must be >= 1"),
            (c.speed_mps * c.timestep_s > 0, "speed_mps * timestep_s must be positive"),
            (c.episode_len >= 1, "episode_len must be a positive step count"),
            (c.window_len >= 1, "window_len must be >= 1"),
            (c.window_len <= c.episode_len, "window_len must not exceed episode_len"),
            (0 <= c.sat_threshold <= c.window_len, "sat_threshold must lie in [0, window_len]"),
            (c.d_th_m >= 1.0, "d_th_m must be >= 1 m"),
            (c.area_width_m > 2 * c.speed_mps * c.timestep_s, "area_width_m too small for the step size"),
            (c.area_height_m > 2 * c.speed_mps * c.timestep_s, "area_height_m too small for the step size"),
            (c.lambda_s >= 0 and c.lambda_c >= 0, "penalty weights must be non-negative"),
            (c.safety_mode in SAFETY_MODES, f"safety_mode must be one of {SAFETY_MODES}"),
            (c.los_mode in LOS_MODES, f"los_mode must be one of {LOS_MODES}"),
            (0 < c.fov_deg < 180, "fov_deg must lie in (0, 180)"),
            (c.fc_ghz > 0, "fc_ghz must be positive"),
            (c.pn_dbm < 0, "pn_dbm must be negative"),
            (c.num_gues >= 1, "num_gues must be >= 1"),
            (c.num_beams >= 1 and math.isqrt(c.num_beams) ** 2 == c.num_beams,
             "num_beams must be a perfect square (grid layout)"),
            (c.rng_seed >= 0, "rng_seed must be non-negative"),
            (c.num_train_episodes >= 0, "num_train_episodes must be >= 0"),
            (c.eval_period >= 1, "eval_period must be >= 1"),
            (c.update_period >= 1, "update_period must be >= 1"),
            (c.batch_size >= 1, "batch_size must be >= 1"),
            (c.buffer_capacity >= c.batch_size, "buffer_capacity must hold at least one batch"),
            (0 <= c.eps_final <= c.eps_start <= 1, "epsilon schedule must satisfy 0 <= final <= start <= 1"),
            (0 < c.eps_decay_frac <= 1, "eps_decay_frac must lie in (0, 1]"),
            (c.target_sync_period >= 1, "target_sync_period must be >= 1"),
            (all(h >= 1 for h in c.hidden_sizes) and len(c.hidden_sizes) >= 1,
             "hidden_sizes must be a non-empty tuple of positive ints"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def step_len_m(self) -> float:
        return self.speed_mps * self.timestep_s

    def replace(self, **overrides) -> "SimConfig":
        return dataclasses.replace(self, **overrides)

    def to_text(self) -> str:
        """Canonical ``key = value`` serialization, sorted by key."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SimConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
            kwargs[key] = _coerce(known[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "SimConfig":
        mapping = parse_config_file(path)
        if overrides:
            mapping.update(overrides)
        return cls.from_mapping(mapping)


def _coerce(field, raw):
    """Coerce a string (or already-typed value) to the field's type."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    t = field.type if isinstance(field.type, type) else str(field.type)
    name = t if isinstance(t, str) else t.__name__
    try:
        if name == "int":
            return int(text)
        if name == "float":
            return float(text)
        if name == "tuple":
            return tuple(int(p) for p in text.split(",") if p.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {field.name!r}: cannot parse {text!r}") from exc


def parse_config_file(path) -> dict:
    """Parse a flat ``key = value`` file. Blank lines and ``#`` comments allowed."""
    mapping = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


# Reduced scale for quick desk runs and CI: fewer episodes, smaller area and
# GUE count, and a smaller/faster learner sized to still show a training trend.
# The SNR threshold is raised so that at this compressed geometry a GUE is
# served only when inside a beam footprint; with the full-scale threshold the
# whole reduced area would be served unconditionally and the satisfaction
# metric would saturate at 1 for every mode.
DESK_OVERRIDES = dict(
    num_train_episodes=100,
    num_gues=20,
    area_width_m=200.0,
    area_height_m=120.0,
    eval_period=10,
    snr_th_db=25.0,
    hidden_sizes=(64, 64),
    learning_rate=5e-4,
    buffer_capacity=30_000,
)


def desk_preset(**overrides) -> SimConfig:
    """Reduced-scale configuration for fast desk runs and CI."""
    base = dict(DESK_OVERRIDES)
    base.update(overrides)
    return SimConfig(**base)
