"""Run configuration, loaded from and written to YAML."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..env.tasks import get_task
from ..env.vec import DomainRandomization
from ..rl.ppo import PPOConfig

MODES = ("vlm", "oracle-keypoints", "oracle-trajectory", "reduced-n", "prerecorded")
BACKENDS = ("oracle", "simulated", "replay", "record", "remote")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "move_apple"
    backend: str = "oracle"
    mode: str = "vlm"
    n_waypoints: int = 20
    n_conditions: int = 100
    eval_configs: int = 100
    eval_trials: int = 20
    eval_jitter: float = 0.005          # uniform object xy jitter per eval trial, metres
    eval_interval: int = 25             # PPO iterations between checkpoint evaluations
    eval_episodes: int = 64             # episodes per checkpoint evaluation
    seed: int = 0
    hidden: tuple[int, ...] = (512, 512, 512)
    precision: str = "float32"          # network weight dtype during training
    ppo: PPOConfig = field(default_factory=PPOConfig)
    dr: DomainRandomization = field(default_factory=DomainRandomization)
    image_size: int = 400
    cache_dir: str | None = None
    out_dir: str = "runs/default"
    trace_episodes: int = 20            # evaluation episodes written to the JSON-lines trace
    kp_error_distance: float = 0.05

    def __post_init__(self):
        get_task(self.task)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.n_conditions < 1 or self.eval_configs < 1 or self.eval_trials < 1:
            raise ConfigError("condition and evaluation counts must be >= 1")
        if self.n_waypoints < 3:
            raise ConfigError("at least 3 waypoints are required")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("evaluation interval and size must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def spec(self):
        return get_task(self.task)

    def digest(self) -> str:
        """Hash of everything that shapes the trained policy (not output paths)."""
        d = to_dict(self)
        for key in ("out_dir", "cache_dir", "trace_episodes", "eval_configs", "eval_trials"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_updates(self, **kw) -> RunConfig:
        return replace(self, **kw)


def small_profile(cfg: RunConfig) -> RunConfig:
    """Desk-scale profile: 128-wide networks and a shorter default run."""
    return replace(cfg, hidden=(128, 128, 128),
                   ppo=replace(cfg.ppo, max_iterations=min(cfg.ppo.max_iterations, 300)))


def to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    d["dr"]["multiplier_range"] = list(cfg.dr.multiplier_range)
    return d


def from_dict(d: dict) -> RunConfig:
    d = dict(d or {})
    known = {f.name for f in fields(RunConfig)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    if "ppo" in d:
        p = dict(d["ppo"])
        bad = set(p) - {f.name for f in fields(PPOConfig)}
        if bad:
            raise ConfigError(f"unknown ppo keys {sorted(bad)}")
        d["ppo"] = PPOConfig(**p)
    if "dr" in d:
        r = dict(d["dr"])
        bad = set(r) - {f.name for f in fields(DomainRandomization)}
        if bad:
            raise ConfigError(f"unknown dr keys {sorted(bad)}")
        if "multiplier_range" in r:
            r["multiplier_range"] = tuple(r["multiplier_range"])
        d["dr"] = DomainRandomization(**r)
    if "hidden" in d:
        d["hidden"] = tuple(d["hidden"])
    try:
        return RunConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return from_dict(yaml.safe_load(fh))


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=True)
    return path
