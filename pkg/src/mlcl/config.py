"""Run configuration: TOML sections mapped onto the module dataclasses.

Sections are ``[data]``, ``[train]``, ``[loss]``, ``[eval]``, ``[analysis]``,
``[collapse]`` and ``[paths]``. Unknown sections or keys are rejected. The
``MLCL_SEED`` environment variable overrides every seed.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import GeneratorConfig
from .evaluation import EvalConfig
from .losses import LossConfig
from .training import TrainConfig

PROFILES = ("desk", "paper-grid")


class ConfigError(ValueError):
    pass


@dataclass
class AnalysisConfig:
    fractions: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    attrep_batch: int = 32
    attrep_tau: float = 1.0
    split: str = "test"
    seed: int = 0


@dataclass
class CollapseConfig:
    n: int = 40
    num_labels: int = 4
    dim: int = 8
    steps: int = 5000
    tau: float = 0.5
    lr: float = 0.01
    seed: int = 0


@dataclass
class PathsConfig:
    dataset: str = ""
    checkpoint: str = ""
    out: str = ""


SECTIONS = {
    "data": GeneratorConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "eval": EvalConfig,
    "analysis": AnalysisConfig,
    "collapse": CollapseConfig,
    "paths": PathsConfig,
}


def _desk_defaults():
    return {
        "data": GeneratorConfig(),
        "train": TrainConfig(),
        "loss": LossConfig(),
        "eval": EvalConfig(),
        "analysis": AnalysisConfig(),
        "collapse": CollapseConfig(),
        "paths": PathsConfig(),
    }


@dataclass
class RunConfig:
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    collapse: CollapseConfig = field(default_factory=CollapseConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _coerce(section, f, value):
    default = getattr(SECTIONS[section](), f.name)
    key = f"{section}.{f.name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected bool, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected int, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected float, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected string, got {value!r}")
        return value
    raise ConfigError(f"{key}: unsupported type")


def build_config(raw: dict | None = None, profile: str = "desk", env=None) -> RunConfig:
    """Defaults, then profile, then the parsed TOML mapping, then ``MLCL_SEED``."""
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile!r}")
    env = os.environ if env is None else env
    parts = _desk_defaults()
    if profile == "paper-grid":
        parts["eval"] = EvalConfig.full_grid()
        parts["train"] = dataclasses.replace(parts["train"], epochs=80, queue_size=512)
    raw = raw or {}
    for section, values in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown config section")
        if not isinstance(values, dict):
            raise ConfigError(f"{section}: expected a table")
        known = {f.name: f for f in fields(SECTIONS[section])}
        updates = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"{section}.{key}: unknown config key")
            updates[key] = _coerce(section, known[key], value)
        try:
            parts[section] = dataclasses.replace(parts[section], **updates)
        except ValueError as exc:
            raise ConfigError(f"{section}: {exc}") from None
    seed = env.get("MLCL_SEED")
    if seed is not None:
        try:
            seed = int(seed)
        except ValueError:
            raise ConfigError(f"MLCL_SEED: expected int, got {seed!r}") from None
        for section in ("data", "train", "eval", "analysis", "collapse"):
            parts[section] = dataclasses.replace(parts[section], seed=seed)
    return RunConfig(**parts)


def load_config(path: str | None, profile: str = "desk", env=None) -> RunConfig:
    if not path:
        return build_config({}, profile, env)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: {path}: {exc}") from None
    return build_config(raw, profile, env)


def describe_keys() -> str:
    """Every config key with its type and desk default, for ``--help``."""
    lines = ["config keys (TOML sections; desk defaults):"]
    defaults = _desk_defaults()
    for section, cls in SECTIONS.items():
        lines.append(f"  [{section}]")
        for f in fields(cls):
            value = getattr(defaults[section], f.name)
            kind = type(value).__name__ if not isinstance(value, tuple) else "list[float]"
            lines.append(f"    {f.name:<18} {kind:<12} default={list(value) if isinstance(value, tuple) else value!r}")
    return "\n".join(lines)
