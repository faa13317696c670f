"""Run configuration: TOML file with one section per module, overridden by flags.

Example::

    [env]
    kind = "craftsim"          # or "bridge"
    tasks = "tasks.json"
    # endpoint = "tcp://127.0.0.1:7001"

    [actor]
    backend = "scripted"
    m = 5
    fidelity = 0.3

    [critic]
    kind = "oracle"            # oracle | remote | none
    mode = "per-step"          # per-step | off

    [run]
    seed = 0
    workers = 4
    output = "runs"

    [iterate]
    rounds = 3

    [mix]
    beta = 0.8

Credentials never appear here; remote backends read ACTOR_ENDPOINT, ACTOR_KEY,
CRITIC_ENDPOINT and CRITIC_KEY from the environment.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .craftsim.generator import task_from_dict
from .trajectory import Instruction

SECTIONS = ("env", "actor", "critic", "run", "iterate", "mix")
_FORBIDDEN = {"key", "api_key", "token", "password", "secret"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "craftsim"
    endpoint: str | None = None
    tasks: str | None = None
    actor: str = "scripted"
    m: int = 5
    temperature: float = 1.0
    fidelity: float = 1.0
    tracking: str = "open-loop"
    dedup: bool = False
    model: str = "default"
    critic: str = "oracle"
    critic_noise: float = 0.0
    critic_expert: bool = False
    critique_mode: str = "per-step"
    max_steps: int | None = None
    seed: int = 0
    workers: int = 1
    output: str = "runs"
    run_id: str | None = None
    rounds: int = 3
    trainer_hook: str | None = None
    beta: str = "0.8"
    general: str | None = None
    mix_total: int | None = None
    mix_seed: int = 0
    only_revised: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError("rounds (K) must be >= 1")
        if self.m < 1:
            raise ConfigError("m (candidates per step) must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if not 0 <= self.beta_fraction <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        if self.env not in ("craftsim", "bridge"):
            raise ConfigError(f"unknown env kind {self.env!r}")
        if self.env == "bridge" and not self.endpoint:
            raise ConfigError("bridge env needs an endpoint")
        for name in ("tasks", "general"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name} file not found: {value}")

    @property
    def beta_fraction(self) -> Fraction:
        try:
            return Fraction(str(self.beta))
        except ValueError as exc:
            raise ConfigError(f"beta is not a number: {self.beta!r}") from exc

    def snapshot(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("extra")
        return data


# (section, key) -> RunConfig field
_KEYS = {
    ("env", "kind"): "env",
    ("env", "endpoint"): "endpoint",
    ("env", "tasks"): "tasks",
    ("actor", "backend"): "actor",
    ("actor", "m"): "m",
    ("actor", "temperature"): "temperature",
    ("actor", "fidelity"): "fidelity",
    ("actor", "tracking"): "tracking",
    ("actor", "dedup"): "dedup",
    ("actor", "model"): "model",
    ("critic", "kind"): "critic",
    ("critic", "noise"): "critic_noise",
    ("critic", "expert"): "critic_expert",
    ("critic", "mode"): "critique_mode",
    ("run", "max_steps"): "max_steps",
    ("run", "seed"): "seed",
    ("run", "workers"): "workers",
    ("run", "output"): "output",
    ("run", "run_id"): "run_id",
    ("iterate", "rounds"): "rounds",
    ("iterate", "trainer_hook"): "trainer_hook",
    ("mix", "beta"): "beta",
    ("mix", "general"): "general",
    ("mix", "total"): "mix_total",
    ("mix", "seed"): "mix_seed",
    ("mix", "only_revised"): "only_revised",
}


def load_config(path: str | Path | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    base = Path(path).parent
    for section, values in data.items():
        if section not in SECTIONS or not isinstance(values, dict):
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in values.items():
            if key.lower() in _FORBIDDEN:
                raise ConfigError(f"[{section}] {key}: credentials belong in environment variables")
            name = _KEYS.get((section, key))
            if name is None:
                raise ConfigError(f"unknown key [{section}] {key}")
            if name in ("tasks", "general") and value is not None:
                value = str(base / value) if not Path(value).is_absolute() else value
            if name == "beta":
                value = str(value)
            setattr(cfg, name, value)
    return cfg


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def dumps_snapshot(cfg: RunConfig) -> str:
    return json.dumps(cfg.snapshot(), indent=2, sort_keys=True) + "\n"


def load_task_file(path: str | Path) -> list:
    """Craftsim task sets become CraftTasks; plain instruction records become Instructions."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    records = data["tasks"] if isinstance(data, dict) else data
    tasks = [task_from_dict(d) if "recipes" in d else Instruction.from_dict(d) for d in records]
    ids = [t.task_id if hasattr(t, "task_id") else t.instruction.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate task ids in {path}")
    return tasks
