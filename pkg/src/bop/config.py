"""Run configuration and its flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, fields

from .envs import parse_env_name

UPDATE_SCHEDULES = ("all", "active-only", "most-uncertain-only", "random-by-uncertainty",
                    "top-50-percent-uncertain")
SELECTION_MODES = ("average-then-argmax", "argmax-then-vote", "sample-then-argmax", "sample")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    env: str = ""
    heads: int = 3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    num_envs: int = 4
    episodes_per_rollout: int = 2
    rollout_steps: int = 64
    minibatch: int = 64
    update_epochs: int = 4
    entropy_coef: float = 0.01
    value_loss_weight: float = 0.5
    lr_start: float = 2.5e-4
    lr_end: float = 0.0
    clip_start: float = 0.1
    clip_end: float = 0.0
    normalize_advantages: bool = False
    surrogate: str = "clipped"            # clipped | raw
    ppo_ratio_baseline: str = "behaviour"  # behaviour | own
    curiosity_beta: float = 0.05
    curiosity_clip: float = 1.0
    curiosity_prior: str = "local"        # local | shared
    shared_targets: bool = False
    rho_bar: float = 1.0
    c_bar: float = 1.0
    latent_dim: int = 8
    width: int = 64
    activation: str = "tanh"
    target_sync_period: int = 8
    update_schedule: str = "all"
    test_selection: str = "average-then-argmax"
    gaussian_average: str = "parameter"   # parameter | mixture
    probe_states: int = 64
    total_env_steps: int = 100_000
    eval_every: int = 1
    eval_episodes: int = 1
    checkpoint_every: int = 0
    seed: int = 0

    def validate(self) -> "RunConfig":
        if not self.env:
            raise ConfigError("env", "environment name is required (e.g. deep_sea:10)")
        try:
            parse_env_name(self.env)
        except ValueError as e:
            raise ConfigError("env", str(e)) from None
        positive = ("heads", "num_envs", "episodes_per_rollout", "rollout_steps", "minibatch",
                    "update_epochs", "latent_dim", "width", "target_sync_period", "probe_states",
                    "total_env_steps", "eval_episodes")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        nonneg = ("gamma", "gae_lambda", "entropy_coef", "value_loss_weight", "lr_start", "lr_end",
                  "clip_start", "clip_end", "curiosity_beta", "curiosity_clip", "rho_bar", "c_bar",
                  "eval_every", "checkpoint_every")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be nonnegative")
        if self.lr_end > self.lr_start:
            raise ConfigError("lr_end", "learning-rate schedule must be nonincreasing")
        if self.clip_end > self.clip_start:
            raise ConfigError("clip_end", "clip schedule must be nonincreasing")
        choices = {
            "surrogate": ("clipped", "raw"),
            "ppo_ratio_baseline": ("behaviour", "own"),
            "curiosity_prior": ("local", "shared"),
            "activation": ("tanh", "relu"),
            "update_schedule": UPDATE_SCHEDULES,
            "test_selection": SELECTION_MODES[:3],
            "gaussian_average": ("parameter", "mixture"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"must be one of {', '.join(allowed)}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# Published hyperparameter values that the desk-scale defaults deliberately change.
PAPER_DEFAULTS = {
    "num_envs": 16,
    "minibatch": 256,
    "rollout_steps": 128,
    "episodes_per_rollout": 4,
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _TYPES[name]
    kind = {"int": int, "float": float, "bool": bool, "str": str}.get(kind, kind)
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            try:
                return int(raw)
            except ValueError:
                value = float(raw)  # accept 2e5
                if not value.is_integer():
                    raise
                return int(value)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(name, f"cannot parse {raw!r} as {kind.__name__}") from None


def apply_overrides(cfg: RunConfig, pairs: typing.Iterable[tuple[str, str]]) -> RunConfig:
    changes = {}
    for key, value in pairs:
        key = key.strip()
        if key not in _TYPES:
            raise ConfigError(key, "unknown configuration key")
        changes[key] = _coerce(key, value)
    return cfg.replace(**changes)


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key, value))
    return apply_overrides(RunConfig(), pairs)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        text = str(value).lower() if isinstance(value, bool) else repr(value) if isinstance(
            value, float) else str(value)
        line = f"{f.name} = {text}"
        if f.name in PAPER_DEFAULTS and PAPER_DEFAULTS[f.name] != value:
            line += f"  # paper_default: {PAPER_DEFAULTS[f.name]}"
        lines.append(line)
    return "\n".join(lines) + "\n"
