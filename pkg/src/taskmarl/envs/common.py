from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class EnvContractError(RuntimeError):
    """Raised when an environment is driven outside its contract."""


class ConfigError(ValueError):
    pass


@dataclass
class StepResult:
    observations: list
    rewards: np.ndarray
    terminated: bool
    info: dict[str, Any] = field(default_factory=dict)
