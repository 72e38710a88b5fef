"""Strict JSON run configuration.

Every section maps onto one dataclass; unknown keys, wrong value types and
invalid values all raise :class:`ConfigError`. A missing section or key keeps
its default, so ``{}`` is a valid configuration.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .belief import BeliefHyper
from .env import BEHAVIOR_MODES, EnvConfig, RewardWeights
from .errors import ConfigError
from .qlearn.training import TrainConfig
from .scripted import ScriptedPolicyParams


@dataclass
class DataConfig:
    episodes: int = 2000
    # exploration noise on the scripted actions, as a fraction of each half-range;
    # widens the state coverage the belief model is trained on
    action_noise: float = 0.3
    modes: tuple[str, ...] = BEHAVIOR_MODES

    def validate(self) -> None:
        if self.episodes < 1:
            raise ConfigError("data.episodes must be >= 1")
        if self.action_noise < 0:
            raise ConfigError("data.action_noise must be >= 0")
        if not self.modes or any(m not in BEHAVIOR_MODES for m in self.modes):
            raise ConfigError(f"data.modes must be a non-empty subset of {BEHAVIOR_MODES}")


@dataclass
class OutputConfig:
    """Default file locations, used when the matching CLI flag is omitted."""

    data: str = "data.jsonl"
    belief: str = "belief.json"
    belief_losses: str = "belief_losses.csv"
    qnet: str = "qnet.json"
    metrics: str = "metrics.csv"

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if not getattr(self, f.name):
                raise ConfigError(f"output.{f.name} must be a non-empty path")


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    belief: BeliefHyper = field(default_factory=BeliefHyper)
    train: TrainConfig = field(default_factory=TrainConfig)
    scripted: ScriptedPolicyParams = field(default_factory=ScriptedPolicyParams)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def reward(self) -> RewardWeights:
        return self.env.reward

    def validate(self) -> None:
        for section in (self.env, self.belief, self.train, self.scripted, self.data, self.output):
            try:
                section.validate()
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc


def _coerce(value: Any, hint: Any, where: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where} must have {len(args)} entries")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    raise ConfigError(f"{where}: unsupported field type {hint!r}")


def _build(cls: type, raw: Any, where: str, skip: tuple[str, ...] = ()) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if f.name not in skip}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in raw.items()}
    return cls(**kwargs)


SECTIONS = ("env", "reward", "belief", "train", "scripted", "data", "output")


def config_from_dict(raw: Any) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown configuration section(s): {', '.join(unknown)}")
    reward = _build(RewardWeights, raw.get("reward", {}), "reward")
    env = _build(EnvConfig, raw.get("env", {}), "env", skip=("reward",))
    env = dataclasses.replace(env, reward=reward)
    cfg = RunConfig(
        env=env,
        belief=_build(BeliefHyper, raw.get("belief", {}), "belief"),
        train=_build(TrainConfig, raw.get("train", {}), "train"),
        scripted=_build(ScriptedPolicyParams, raw.get("scripted", {}), "scripted"),
        data=_build(DataConfig, raw.get("data", {}), "data"),
        output=_build(OutputConfig, raw.get("output", {}), "output"),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    """Read a configuration file; ``None`` gives the defaults."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def _plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    """Inverse of :func:`config_from_dict` (reward split back out of env)."""
    env = _plain(cfg.env)
    reward = env.pop("reward")
    return {
        "env": env,
        "reward": reward,
        "belief": _plain(cfg.belief),
        "train": _plain(cfg.train),
        "scripted": _plain(cfg.scripted),
        "data": _plain(cfg.data),
        "output": _plain(cfg.output),
    }
