"""Cooperative navigation: N agents, N landmarks, continuous 2D particle physics.

Dynamics follow the multi-particle engine the benchmark suite uses: per step
``pos += vel*dt``, then ``vel *= 1 - damping``, then ``vel += force/mass*dt``.
Agent-agent contacts push with a soft penetration force.  Landmarks never
collide and never move.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from taskmarl.envs.common import EnvContractError, StepResult

# action index -> unit force direction
SPREAD_ACTIONS = np.array([[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
NOOP, LEFT, RIGHT, DOWN, UP = range(5)


@dataclass(frozen=True)
class SpreadConfig:
    n_agents: int = 3
    max_steps: int = 25
    local_ratio: float = 0.5
    dt: float = 0.1
    damping: float = 0.25
    sensitivity: float = 5.0
    agent_size: float = 0.15
    contact_force: float = 100.0
    contact_margin: float = 1e-3
    mass: float = 1.0

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError(f"n_agents must be >= 2, got {self.n_agents}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if not 0.0 <= self.local_ratio <= 1.0:
            raise ValueError(f"local_ratio must lie in [0, 1], got {self.local_ratio}")

    @property
    def collision_distance(self) -> float:
        return 2 * self.agent_size


@dataclass
class SpreadState:
    agent_pos: np.ndarray  # [N, 2]
    agent_vel: np.ndarray  # [N, 2]
    landmark_pos: np.ndarray  # [N, 2]
    step: int = 0


@dataclass(frozen=True)
class SpreadObservation:
    position: np.ndarray  # (2,)
    velocity: np.ndarray  # (2,)
    landmarks: np.ndarray  # [N, 2] landmark - self
    allies: np.ndarray  # [N-1, 2] other - self, in agent order
    ally_ids: tuple[int, ...] = field(default=())


def spread_observe(state: SpreadState, i: int) -> SpreadObservation:
    n = len(state.agent_pos)
    if not 0 <= i < n:
        raise IndexError(f"agent index {i} out of range for {n} agents")
    pos = state.agent_pos[i]
    others = [j for j in range(n) if j != i]
    return SpreadObservation(
        position=pos.copy(),
        velocity=state.agent_vel[i].copy(),
        landmarks=state.landmark_pos - pos,
        allies=state.agent_pos[others] - pos,
        ally_ids=tuple(others),
    )


class SpreadEnv:
    """Seedable Spread instance.  ``reset`` reseeds the private generator."""

    n_actions = 5

    def __init__(self, config: SpreadConfig | None = None):
        self.config = config or SpreadConfig()
        self.state: SpreadState | None = None
        self.rng = np.random.default_rng(0)
        self.terminated = False

    @property
    def n_agents(self) -> int:
        return self.config.n_agents

    def reset(self, seed: int) -> tuple[SpreadState, list[SpreadObservation]]:
        self.rng = np.random.default_rng(seed)
        n = self.config.n_agents
        self.state = SpreadState(
            agent_pos=self.rng.uniform(-1.0, 1.0, (n, 2)),
            agent_vel=np.zeros((n, 2)),
            landmark_pos=self.rng.uniform(-1.0, 1.0, (n, 2)),
        )
        self.terminated = False
        return self.state, self.observe_all()

    def observe_all(self) -> list[SpreadObservation]:
        return [spread_observe(self.state, i) for i in range(self.n_agents)]

    def contact_forces(self) -> np.ndarray:
        cfg = self.config
        pos = self.state.agent_pos
        delta = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((delta**2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        k = cfg.contact_margin
        penetration = np.logaddexp(0.0, -(dist - cfg.collision_distance) / k) * k
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(dist[..., None] > 0, delta / dist[..., None], 0.0)
        return cfg.contact_force * (unit * penetration[..., None]).sum(axis=1)

    def rewards(self) -> np.ndarray:
        cfg = self.config
        s = self.state
        lm_dist = np.sqrt(((s.landmark_pos[:, None, :] - s.agent_pos[None, :, :]) ** 2).sum(-1))
        global_r = -lm_dist.min(axis=1).sum()
        pair = np.sqrt(((s.agent_pos[:, None, :] - s.agent_pos[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(pair, np.inf)
        local_r = -(pair < cfg.collision_distance).sum(axis=1).astype(np.float64)
        return (1.0 - cfg.local_ratio) * global_r + cfg.local_ratio * local_r

    def step(self, actions, observe: bool = True) -> StepResult:
        if self.state is None or self.terminated:
            raise EnvContractError("step() on a terminated or un-reset Spread episode")
        cfg = self.config
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (cfg.n_agents,) or actions.min() < 0 or actions.max() >= 5:
            raise EnvContractError(f"expected {cfg.n_agents} actions in [0, 5), got {actions}")
        s = self.state
        force = SPREAD_ACTIONS[actions] * cfg.sensitivity + self.contact_forces()
        s.agent_pos = s.agent_pos + s.agent_vel * cfg.dt
        s.agent_vel = s.agent_vel * (1.0 - cfg.damping) + force / cfg.mass * cfg.dt
        s.step += 1
        rewards = self.rewards()
        self.terminated = s.step >= cfg.max_steps
        return StepResult(self.observe_all() if observe else [], rewards, self.terminated, {"step": s.step})

    def random_actions(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 5, self.n_agents)
