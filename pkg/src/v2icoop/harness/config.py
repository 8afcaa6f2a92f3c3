"""Training, evaluation and link configuration, loaded from JSON.

Keys mirror the dataclass field names exactly; nested sections
(``grid``, ``scene``, ``model``, ``eval``, ``link``) mirror their own
dataclasses. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from ..config import ModelConfig
from ..scene import GridConfig, SceneConfig

SEED_ENV = "V2ICOOP_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LinkModel:
    bandwidth_bps: float = 10e6
    latency_s: float = 0.01

    def __post_init__(self):
        if not self.bandwidth_bps > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth_bps}")
        if not self.latency_s >= 0:
            raise ConfigError(f"latency must be nonnegative, got {self.latency_s}")


@dataclass(frozen=True)
class EvalConfig:
    num_scenes: int = 200
    occlusion_fraction: float = 0.5
    seed_base: int = 0  # eval scene i uses seed seed_base + i
    save_messages: int = 8  # frames whose WireMessages a sweep writes out


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1e-3
    learning_rate: float = 0.002
    weight_decay: float = 1e-4
    batch_size: int = 4
    steps: int = 3000
    seed: int = 0
    train_scenes: int = 512
    occlusion_fraction: float = 0.5
    rate_normalizer: float = 100.0  # bits per frame are divided by this before beta
    warmup_steps: int = 600  # rate trains only the entropy model
    beta_ramp_steps: int = 400  # then beta ramps linearly to its value
    selection_lr_scale: float = 0.2  # learning-rate multiplier for the selection scorer
    beta_min: float = 1e-4
    beta_max: float = 1e-2
    log_every: int = 100
    grid: GridConfig = field(default_factory=GridConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    link: LinkModel = field(default_factory=LinkModel)

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not self.beta_min <= self.beta <= self.beta_max:
            raise ConfigError(f"beta {self.beta} outside sweep bounds [{self.beta_min}, {self.beta_max}]")
        if self.batch_size < 1 or self.steps < 0 or self.train_scenes < 1:
            raise ConfigError("batch_size and train_scenes must be >= 1, steps >= 0")
        if self.warmup_steps < 0 or self.beta_ramp_steps < 0:
            raise ConfigError("warmup_steps and beta_ramp_steps must be >= 0")
        if not self.selection_lr_scale > 0:
            raise ConfigError("selection_lr_scale must be positive")
        if self.rate_normalizer <= 0:
            raise ConfigError("rate_normalizer must be positive")

    def in_warmup(self, step):
        return step < self.warmup_steps

    def beta_at(self, step):
        """Rate weight at ``step``: full beta in warm-up (entropy model only), then a linear ramp."""
        k = step - self.warmup_steps
        if k < 0 or k >= self.beta_ramp_steps:
            return self.beta
        return self.beta * (k + 1) / (self.beta_ramp_steps + 1)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return _to_plain(dataclasses.asdict(self))

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_NESTED = {"grid": GridConfig, "scene": SceneConfig, "model": ModelConfig, "eval": EvalConfig, "link": LinkModel}


def _to_plain(v):
    if isinstance(v, dict):
        return {k: _to_plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_to_plain(x) for x in v]
    return v


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        if cls is TrainConfig and k in _NESTED:
            v = _build(_NESTED[k], v, f"{where}.{k}")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(data, env=None):
    """TrainConfig from a plain dict; ``V2ICOOP_SEED`` in ``env`` overrides ``seed``."""
    cfg = _build(TrainConfig, data, "config")
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "") != "":
        try:
            cfg = cfg.replace(seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg


def read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None


def load_config(path, env=None):
    return config_from_dict(read_json(path), env)


def save_config(cfg: TrainConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
