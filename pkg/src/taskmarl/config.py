"""Run configuration: one YAML document, validated, with a stable fingerprint.

Sections ``spread``, ``pursuit`` and ``train`` mirror the fields of the
matching dataclasses, so their defaults live in exactly one place.  A few
flat shortcuts (``n_agents``, ``obs_range``, ``max_steps``) override the
section of the selected environment.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model

from taskmarl.envs import PursuitConfig, SpreadConfig
from taskmarl.trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


def _section_model(dc) -> type[BaseModel]:
    hints = typing.get_type_hints(dc)
    fields = {f.name: (hints[f.name], f.default) for f in dataclasses.fields(dc)}
    return create_model(f"{dc.__name__}Section", __config__=ConfigDict(extra="forbid", strict=False),
                        **fields)


SpreadSection = _section_model(SpreadConfig)
PursuitSection = _section_model(PursuitConfig)
TrainSection = _section_model(TrainConfig)


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    episodes: int = Field(50, ge=1)
    repetitions: int = Field(30, ge=1)
    resamples: int = Field(10_000, ge=100)
    scale_ns: list[int] = [6, 9, 12, 15]
    fov_ranges: list[int] = [5, 9]
    mode: Literal["greedy", "sample"] = "greedy"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    env: Literal["spread", "pursuit"] = "spread"
    seed: int = Field(0, ge=0)
    out_dir: str = "runs"
    n_agents: Optional[int] = None
    obs_range: Optional[int] = None
    max_steps: Optional[int] = None
    spread: SpreadSection = Field(default_factory=SpreadSection)
    pursuit: PursuitSection = Field(default_factory=PursuitSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    # ---------------------------------------------------------------- builders

    def env_config(self) -> SpreadConfig | PursuitConfig:
        if self.env == "spread":
            values = self.spread.model_dump()
            shortcuts = {"n_agents": "n_agents", "max_steps": "max_steps"}
            section, cls = "spread", SpreadConfig
        else:
            values = self.pursuit.model_dump()
            shortcuts = {"n_agents": "n_pursuers", "obs_range": "obs_range", "max_steps": "max_cycles"}
            section, cls = "pursuit", PursuitConfig
        for flat, name in shortcuts.items():
            if getattr(self, flat) is not None:
                values[name] = getattr(self, flat)
        return _build(cls, values, section)

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, self.train.model_dump(), "train")

    def canonical(self) -> dict[str, Any]:
        """Resolved, JSON-ready form; output location does not affect results."""
        d = self.model_dump()
        d.pop("out_dir")
        return json.loads(json.dumps(d, sort_keys=True))

    def fingerprint(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, values: dict, section: str):
    try:
        return cls(**values)
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in values if msg.startswith(k)), None)
        raise ConfigError(f"{section}.{key}: {msg}" if key else f"{section}: {msg}") from None


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            parts.append(f"{loc}: unknown key")
        else:
            parts.append(f"{loc}: {err['msg']} (got {err.get('input')!r})")
    return "; ".join(parts)


def validate_config(data: dict | None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"<root>: expected a mapping of keys, got {type(data).__name__}")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None
    if cfg.n_agents is not None and cfg.n_agents < 1:
        raise ConfigError(f"n_agents: must be >= 1, got {cfg.n_agents}")
    # build once so dataclass invariants surface at parse time
    cfg.env_config()
    cfg.train_config()
    return cfg


def parse_config(path: str | Path | None) -> RunConfig:
    """Read and validate a YAML config; ``None`` or an empty file means all defaults."""
    if path is None:
        return validate_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return validate_config(data)
