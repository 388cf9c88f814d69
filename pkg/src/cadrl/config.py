"""INI-style configuration with dotted-key overrides.

Sections map to components::

    [reward]
    lambda_geom = 0.7
    lambda_eval = 0.3
    eval_endpoint =
    eval_timeout_ms = 2000
    deduction_major = 40
    deduction_minor = 10
    resolution = 64

    [trainer]
    group_size = 8
    eps_low = 0.6
    ...

    [eval]
    resolution = 64
    cd_points = 1024
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .reward import Deductions, RewardEngine, RewardWeights
from .trainer import TrainerConfig


@dataclass
class RewardConfig:
    lambda_geom: float = 0.7
    lambda_eval: float = 0.3
    eval_endpoint: str = ""
    eval_timeout_ms: int = 2000
    deduction_major: int = 40
    deduction_minor: int = 10
    resolution: int = 64

    def __post_init__(self):
        RewardWeights(self.lambda_geom, self.lambda_eval)  # raises on bad weights
        if self.resolution < 1 or self.eval_timeout_ms <= 0:
            raise ValueError("resolution and eval_timeout_ms must be positive")

    def engine(self) -> RewardEngine:
        return RewardEngine(
            weights=RewardWeights(self.lambda_geom, self.lambda_eval),
            deductions=Deductions(self.deduction_major, self.deduction_minor),
            resolution=self.resolution,
            eval_endpoint=self.eval_endpoint or None,
            eval_timeout=self.eval_timeout_ms / 1000,
        )


@dataclass
class EvalConfig:
    resolution: int = 64
    cd_points: int = 1024


@dataclass
class Config:
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {"reward": RewardConfig, "trainer": TrainerConfig, "eval": EvalConfig}


class ConfigError(ValueError):
    pass


def _coerce(kind, raw: str):
    if kind is bool or kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def load_config(path: str | None = None, overrides: list[str] | None = None) -> Config:
    """Read ``path`` (if given) then apply ``section.key=value`` overrides."""
    values: dict[str, dict[str, str]] = {name: {} for name in _SECTIONS}
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            values[section].update(parser[section])
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or section not in _SECTIONS:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        values[section][name] = raw.strip()
    built = {}
    for section, cls in _SECTIONS.items():
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for name, raw in values[section].items():
            if name not in types:
                raise ConfigError(f"unknown key {section}.{name}")
            try:
                kwargs[name] = _coerce(types[name], raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{name}: {exc}") from None
        try:
            built[section] = cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    return Config(**built)
