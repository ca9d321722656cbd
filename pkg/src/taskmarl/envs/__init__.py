"""Spread (continuous navigation) and Pursuit (grid predator-prey) environments."""
from taskmarl.envs.common import ConfigError, EnvContractError, StepResult
from taskmarl.envs.pursuit import (
    PursuitConfig,
    PursuitEnv,
    PursuitObservation,
    PursuitState,
    pursuit_observe,
)
from taskmarl.envs.spread import (
    SpreadConfig,
    SpreadEnv,
    SpreadObservation,
    SpreadState,
    spread_observe,
)


def make_env(config):
    if isinstance(config, SpreadConfig):
        return SpreadEnv(config)
    if isinstance(config, PursuitConfig):
        return PursuitEnv(config)
    raise TypeError(f"unknown environment config {type(config).__name__}")


__all__ = [
    "ConfigError",
    "EnvContractError",
    "PursuitConfig",
    "PursuitEnv",
    "PursuitObservation",
    "PursuitState",
    "SpreadConfig",
    "SpreadEnv",
    "SpreadObservation",
    "SpreadState",
    "StepResult",
    "make_env",
    "pursuit_observe",
    "spread_observe",
]
