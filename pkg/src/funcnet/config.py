"""Experiment configuration: defaults, file grammar, derived settings.

Every constant of the reference setup (schedules, grid size, reward table,
physics, optimizer) is a field with a default, overridable per run through a
versioned key-value config file or CLI flags. The canonical snapshot plus
the master seed fully determine every output byte of a run.
"""

from __future__ import annotations

import math
import typing
from dataclasses import dataclass, fields, replace
from typing import Optional

from .environments.cartpole import CartPoleParams
from .environments.tag import TagRewards
from .trainer import (CARTPOLE_SCHEDULE, MNIST_SCHEDULE, TAG_SCHEDULE,
                      CartPoleOptions, Schedule, TagOptions)

FORMAT_TAG = "funcnet-config"
FORMAT_VERSION = 1

TASKS = ("tag", "tag-prey", "tag-predator", "cartpole", "mnist")

TASK_SHAPES = {"tag": (17, 3), "tag-prey": (17, 3), "tag-predator": (17, 3),
               "cartpole": (4, 2), "mnist": (784, 10)}


class ConfigError(ValueError):
    """Malformed config document or inconsistent settings."""


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "tag"
    n: int = 9
    generations: int = 100
    seed: int = 0
    workers: int = 1
    out: Optional[str] = None
    mnist_dir: Optional[str] = None
    # schedule overrides; unset fields fall back to the task defaults
    episodes_per_generation: Optional[int] = None
    steps_per_episode: Optional[int] = None
    life_cycles: Optional[int] = None
    batch_size: Optional[int] = None
    max_batches_per_episode: Optional[int] = None
    batches_per_generation: Optional[int] = None
    # pursuit grid and rewards
    rows: int = 12
    cols: int = 12
    predator_step_reward: float = -1.0
    prey_step_reward: float = 1.0
    catch_reward: float = 10.0
    caught_reward: float = -10.0
    repeat_penalty: float = -5.0
    # cart-pole physics
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_mag: float = 10.0
    time_step: float = 0.02
    # optimisation
    learning_rate: float = 1e-3
    gamma: float = 0.9
    # stop as soon as any member survives a full episode (cart-pole studies)
    stop_on_full_balance: bool = False


def validate_config(config: ExperimentConfig) -> None:
    """Raise ConfigError on the first inconsistent setting."""
    if config.task not in TASKS:
        raise ConfigError(f"unknown task {config.task!r}; expected one of {TASKS}")
    if config.n < 4 or math.isqrt(config.n) ** 2 != config.n:
        raise ConfigError(f"population size must be a perfect square >= 4, got {config.n}")
    if config.generations < 0:
        raise ConfigError("generations must be non-negative")
    if config.seed < 0:
        raise ConfigError("seed must be non-negative")
    if config.workers < 1:
        raise ConfigError("workers must be at least 1")
    for name in ("episodes_per_generation", "steps_per_episode", "life_cycles",
                 "batch_size", "max_batches_per_episode", "batches_per_generation"):
        value = getattr(config, name)
        if value is not None and value < 1:
            raise ConfigError(f"{name} must be positive, got {value}")
    if config.rows < 4 or config.cols < 4:
        raise ConfigError("grid must be at least 4x4 so starts can avoid contact")
    if not 0.0 <= config.gamma <= 1.0:
        raise ConfigError("gamma must lie in [0, 1]")
    if config.learning_rate <= 0:
        raise ConfigError("learning_rate must be positive")
    if config.time_step <= 0:
        raise ConfigError("time_step must be positive")
    try:
        tag_rewards(config)
        cartpole_physics(config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        schedule_for(config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def task_shape(task: str) -> tuple[int, int]:
    """(network inputs, network outputs) for a task."""
    return TASK_SHAPES[task]


def specialization_for(task: str) -> Optional[str]:
    if task == "tag-prey":
        return "prey"
    if task == "tag-predator":
        return "predator"
    return None


def rl_kind(task: str) -> Optional[str]:
    if task.startswith("tag"):
        return "tag"
    if task == "cartpole":
        return "cartpole"
    return None


def schedule_for(config: ExperimentConfig) -> Schedule:
    base = {"tag": TAG_SCHEDULE, "tag-prey": TAG_SCHEDULE,
            "tag-predator": TAG_SCHEDULE, "cartpole": CARTPOLE_SCHEDULE,
            "mnist": MNIST_SCHEDULE}[config.task]
    overrides = {"generations": config.generations}
    for name in ("episodes_per_generation", "steps_per_episode", "life_cycles",
                 "batch_size", "max_batches_per_episode", "batches_per_generation"):
        value = getattr(config, name)
        if value is not None:
            overrides[name] = value
    return replace(base, **overrides)


def tag_rewards(config: ExperimentConfig) -> TagRewards:
    return TagRewards(predator_step=config.predator_step_reward,
                      prey_step=config.prey_step_reward,
                      catch=config.catch_reward,
                      caught=config.caught_reward,
                      repeat=config.repeat_penalty)


def cartpole_physics(config: ExperimentConfig) -> CartPoleParams:
    return CartPoleParams(gravity=config.gravity, cart_mass=config.cart_mass,
                          pole_mass=config.pole_mass,
                          pole_half_length=config.pole_half_length,
                          force_mag=config.force_mag)


def env_options_for(config: ExperimentConfig):
    if config.task.startswith("tag"):
        return TagOptions(rows=config.rows, cols=config.cols,
                          rewards=tag_rewards(config))
    if config.task == "cartpole":
        return CartPoleOptions(physics=cartpole_physics(config),
                               dt=config.time_step)
    return None


def _field_types() -> dict[str, type]:
    hints = typing.get_type_hints(ExperimentConfig)
    out = {}
    for f in fields(ExperimentConfig):
        hint = hints[f.name]
        if typing.get_origin(hint) is typing.Union:
            hint = next(a for a in typing.get_args(hint) if a is not type(None))
        out[f.name] = hint
    return out


_FIELD_TYPES = _field_types()


def _parse_value(name: str, raw: str, line_no: int):
    kind = _FIELD_TYPES[name]
    if kind is bool:
        if raw in ("true", "false"):
            return raw == "true"
        raise ConfigError(f"line {line_no}: {name} expects true or false, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"line {line_no}: {name} expects {kind.__name__}, "
                          f"got {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse the key-value grammar: a `funcnet-config 1` header, then one
    `key value` pair per line; blank lines and `#` comments are skipped.
    Keys left out keep their defaults; the result is validated."""
    values: dict[str, object] = {}
    header_seen = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            parts = line.split()
            if len(parts) != 2 or parts[0] != FORMAT_TAG:
                raise ConfigError(f"line {line_no}: expected header "
                                  f"'{FORMAT_TAG} {FORMAT_VERSION}'")
            if parts[1] != str(FORMAT_VERSION):
                raise ConfigError(f"line {line_no}: unsupported config version "
                                  f"{parts[1]}")
            header_seen = True
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ConfigError(f"line {line_no}: expected 'key value', got {line!r}")
        key, value = parts
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        values[key] = _parse_value(key, value, line_no)
    if not header_seen:
        raise ConfigError(f"missing header '{FORMAT_TAG} {FORMAT_VERSION}'")
    config = ExperimentConfig(**values)
    validate_config(config)
    return config


def config_to_text(config: ExperimentConfig) -> str:
    """Canonical snapshot: header plus every set field in declaration order."""
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}"]
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} {value}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text)
