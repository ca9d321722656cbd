"""Grid pursuit: pursuers trap randomly moving evaders on a walled grid.

One cycle: pursuers move simultaneously, tag rewards are paid on the new
layout, fully surrounded evaders are removed (their surrounders are paid the
catch reward), surviving evaders take a random step, and every pursuer pays
the urgency cost.

Two occupancy rules are supported.  ``stacking=True`` (default) matches the
reference suite: any number of entities may share a cell, moves are blocked
only by walls and the obstacle, evaders pick uniformly among all five
actions.  ``stacking=False`` keeps one entity per cell: contested targets go
to the lower pursuer index, evaders choose among stay and free neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from taskmarl.envs.common import ConfigError, EnvContractError, StepResult

# action index -> (dx, dy); x is the first grid axis, +y is "north"
PURSUIT_MOVES = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)
STAY, EAST, WEST, NORTH, SOUTH = range(5)
CARDINAL = PURSUIT_MOVES[1:]

OBSTACLE, ALLY, EVADER = range(3)
OBSTACLE_LAYOUTS = ("rectangle", "center2x2", "none")


@dataclass(frozen=True)
class PursuitConfig:
    grid_w: int = 16
    grid_h: int = 16
    n_pursuers: int = 8
    n_evaders: int = 30
    obs_range: int = 7
    max_cycles: int = 500
    catch_reward: float = 5.0
    tag_reward: float = 0.01
    urgency_reward: float = -0.1
    obstacle: str = "rectangle"
    stacking: bool = True
    shared_reward: bool = False

    def __post_init__(self):
        if self.obs_range < 3 or self.obs_range % 2 == 0:
            raise ValueError(f"obs_range must be odd and >= 3, got {self.obs_range}")
        for name in ("grid_w", "grid_h", "n_pursuers", "n_evaders", "max_cycles"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.obstacle not in OBSTACLE_LAYOUTS:
            raise ValueError(f"obstacle must be one of {OBSTACLE_LAYOUTS}, got {self.obstacle!r}")


def obstacle_map(cfg: PursuitConfig) -> np.ndarray:
    """Boolean ``[grid_w, grid_h]`` mask of blocked cells."""
    w, h = cfg.grid_w, cfg.grid_h
    mask = np.zeros((w, h), dtype=bool)
    if cfg.obstacle == "rectangle":
        # central building leaving 30% / 20% of each axis open on both sides
        xs = np.arange(w) / w
        ys = np.arange(h) / h
        mask = ((xs > 0.3) & (xs < 0.7))[:, None] & ((ys > 0.2) & (ys < 0.8))[None, :]
    elif cfg.obstacle == "center2x2":
        cx, cy = w // 2 - 1, h // 2 - 1
        mask[cx : cx + 2, cy : cy + 2] = True
    return mask


@dataclass
class PursuitState:
    obstacle: np.ndarray  # bool [W, H]
    pursuers: np.ndarray  # int [P, 2]
    evaders: np.ndarray  # int [E, 2]
    alive: np.ndarray  # bool [E]
    last_move: np.ndarray  # int [P, 2], unit step of the previous action or zero
    step: int = 0

    def pursuer_counts(self) -> np.ndarray:
        grid = np.zeros(self.obstacle.shape, dtype=np.int64)
        np.add.at(grid, (self.pursuers[:, 0], self.pursuers[:, 1]), 1)
        return grid

    def evader_counts(self) -> np.ndarray:
        grid = np.zeros(self.obstacle.shape, dtype=np.int64)
        live = self.evaders[self.alive]
        np.add.at(grid, (live[:, 0], live[:, 1]), 1)
        return grid


@dataclass(frozen=True)
class PursuitObservation:
    window: np.ndarray  # bool [3, R, R]; window[c, half+dx, half+dy]
    last_move: np.ndarray  # (2,)

    @property
    def obs_range(self) -> int:
        return self.window.shape[1]

    @property
    def half(self) -> int:
        return self.window.shape[1] // 2


def pursuit_observe(state: PursuitState, i: int, obs_range: int,
                    _grids: tuple[np.ndarray, np.ndarray] | None = None) -> PursuitObservation:
    """Square window around pursuer ``i``; cells off the grid read as obstacle."""
    if obs_range < 3 or obs_range % 2 == 0:
        raise ValueError(f"obs_range must be odd and >= 3, got {obs_range}")
    half = obs_range // 2
    pc, ec = _grids if _grids is not None else (state.pursuer_counts(), state.evader_counts())
    w, h = state.obstacle.shape
    x, y = state.pursuers[i]
    window = np.zeros((3, obs_range, obs_range), dtype=bool)
    window[OBSTACLE] = True
    x0, x1 = max(x - half, 0), min(x + half + 1, w)
    y0, y1 = max(y - half, 0), min(y + half + 1, h)
    ox, oy = x0 - (x - half), y0 - (y - half)
    sl = (slice(ox, ox + x1 - x0), slice(oy, oy + y1 - y0))
    window[OBSTACLE][sl] = state.obstacle[x0:x1, y0:y1]
    allies = pc[x0:x1, y0:y1].copy()
    allies[x - x0, y - y0] -= 1  # not counting self
    window[ALLY][sl] = allies > 0
    window[EVADER][sl] = ec[x0:x1, y0:y1] > 0
    return PursuitObservation(window, state.last_move[i].copy())


class PursuitEnv:
    n_actions = 5

    def __init__(self, config: PursuitConfig | None = None):
        self.config = config or PursuitConfig()
        self.obstacle = obstacle_map(self.config)
        # obstacle mask with a one-cell wall border, indexed at (x + 1, y + 1)
        self._blocked = np.pad(self.obstacle, 1, constant_values=True)
        self.state: PursuitState | None = None
        self.rng = np.random.default_rng(0)
        self.terminated = False
        self._check_capacity()

    @property
    def n_agents(self) -> int:
        return self.config.n_pursuers

    def _check_capacity(self):
        cfg = self.config
        free = int((~self.obstacle).sum())
        need = cfg.n_pursuers + cfg.n_evaders if not cfg.stacking else max(cfg.n_pursuers, cfg.n_evaders)
        if need > free:
            raise ConfigError(f"grid {cfg.grid_w}x{cfg.grid_h} has {free} free cells, cannot place {need} entities")

    def _traversable(self, x: int, y: int) -> bool:
        return not self._blocked[x + 1, y + 1]

    def _traversable_many(self, cells: np.ndarray) -> np.ndarray:
        return ~self._blocked[cells[..., 0] + 1, cells[..., 1] + 1]

    def _place(self, n: int, taken: np.ndarray, spread_out: bool) -> np.ndarray:
        """Rejection-sample ``n`` cells; ``spread_out`` also keeps them non-adjacent."""
        w, h = self.obstacle.shape
        taken = taken.copy()
        out = np.zeros((n, 2), dtype=np.int64)
        for k in range(n):
            for _ in range(100_000):
                x, y = int(self.rng.integers(0, w)), int(self.rng.integers(0, h))
                if not taken[x, y]:
                    break
            else:
                raise ConfigError(f"could not place entity {k} of {n}: grid too crowded")
            out[k] = (x, y)
            taken[x, y] = True
            if spread_out:
                for dx, dy in CARDINAL:
                    if 0 <= x + dx < w and 0 <= y + dy < h:
                        taken[x + dx, y + dy] = True
        return out

    def reset(self, seed: int) -> tuple[PursuitState, list[PursuitObservation]]:
        cfg = self.config
        self.rng = np.random.default_rng(seed)
        if cfg.stacking:
            # each group spawns non-adjacent within itself, like the reference suite
            pursuers = self._place(cfg.n_pursuers, self.obstacle, spread_out=True)
            evaders = self._place(cfg.n_evaders, self.obstacle, spread_out=True)
        else:
            pursuers = self._place(cfg.n_pursuers, self.obstacle, spread_out=False)
            taken = self.obstacle.copy()
            taken[pursuers[:, 0], pursuers[:, 1]] = True
            evaders = self._place(cfg.n_evaders, taken, spread_out=False)
        self.state = PursuitState(
            obstacle=self.obstacle,
            pursuers=pursuers,
            evaders=evaders,
            alive=np.ones(cfg.n_evaders, dtype=bool),
            last_move=np.zeros((cfg.n_pursuers, 2), dtype=np.int64),
        )
        self.terminated = False
        return self.state, self.observe_all()

    def observe_all(self, obs_range: int | None = None) -> list[PursuitObservation]:
        r = obs_range or self.config.obs_range
        grids = (self.state.pursuer_counts(), self.state.evader_counts())
        return [pursuit_observe(self.state, i, r, grids) for i in range(self.n_agents)]

    # -------------------------------------------------------------- dynamics

    def _move_pursuers(self, actions: np.ndarray) -> None:
        s = self.state
        target = s.pursuers + PURSUIT_MOVES[actions]
        ok = self._traversable_many(target)
        if not self.config.stacking:
            occupied = {tuple(p) for p in s.pursuers}
            claimed: set[tuple[int, int]] = set()
            for i in range(len(target)):
                cell = tuple(target[i])
                if not ok[i] or actions[i] == STAY:
                    continue
                # lower index wins a contested cell; occupied cells stay blocked
                if cell in claimed or cell in occupied or self._evader_at(cell):
                    ok[i] = False
                else:
                    claimed.add(cell)
        new = np.where(ok[:, None], target, s.pursuers)
        s.last_move = new - s.pursuers
        s.pursuers = new

    def _evader_at(self, cell) -> bool:
        s = self.state
        return bool(np.any(s.alive & (s.evaders[:, 0] == cell[0]) & (s.evaders[:, 1] == cell[1])))

    def _tag_rewards(self, ec: np.ndarray) -> np.ndarray:
        padded = np.pad(ec, 1)
        nb = self.state.pursuers[:, None, :] + CARDINAL[None, :, :] + 1
        return self.config.tag_reward * padded[nb[..., 0], nb[..., 1]].sum(axis=1)

    def _catch(self, pc: np.ndarray) -> np.ndarray:
        """Remove surrounded evaders; return which pursuers took part."""
        s = self.state
        paid = np.zeros(len(s.pursuers), dtype=bool)
        live = np.flatnonzero(s.alive)
        if not len(live):
            return paid
        nb = s.evaders[live][:, None, :] + CARDINAL[None, :, :]  # [E, 4, 2]
        open_ = self._traversable_many(nb)
        padded = np.pad(pc, 1)
        covered = (padded[nb[..., 0] + 1, nb[..., 1] + 1] > 0) & open_
        caught = (open_.sum(1) > 0) & (covered.sum(1) == open_.sum(1))
        if caught.any():
            s.alive[live[caught]] = False
            cells = nb[caught][covered[caught]]  # [K, 2]
            hit = (s.pursuers[:, None, :] == cells[None, :, :]).all(-1)
            paid = hit.any(axis=1)
        return paid

    def _move_evaders(self) -> None:
        s = self.state
        alive = np.flatnonzero(s.alive)
        if self.config.stacking:
            picks = self.rng.integers(0, 5, len(alive))
            target = s.evaders[alive] + PURSUIT_MOVES[picks]
            ok = self._traversable_many(target)
            s.evaders[alive] = np.where(ok[:, None], target, s.evaders[alive])
            return
        busy = {tuple(p) for p in s.pursuers} | {tuple(s.evaders[e]) for e in alive}
        for e in alive:
            here = tuple(s.evaders[e])
            options = [here] + [
                (here[0] + dx, here[1] + dy)
                for dx, dy in CARDINAL
                if self._traversable(here[0] + dx, here[1] + dy) and (here[0] + dx, here[1] + dy) not in busy
            ]
            pick = options[int(self.rng.integers(0, len(options)))]
            busy.discard(here)
            busy.add(pick)
            s.evaders[e] = pick

    def step(self, actions, observe: bool = True) -> StepResult:
        if self.state is None or self.terminated:
            raise EnvContractError("step() on a terminated or un-reset Pursuit episode")
        cfg = self.config
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (cfg.n_pursuers,) or actions.min() < 0 or actions.max() >= 5:
            raise EnvContractError(f"expected {cfg.n_pursuers} actions in [0, 5), got {actions}")
        s = self.state
        self._move_pursuers(actions)
        pc, ec = s.pursuer_counts(), s.evader_counts()
        rewards = self._tag_rewards(ec)
        caught_by = self._catch(pc)
        n_caught = int((~s.alive).sum())
        rewards += cfg.catch_reward * caught_by
        self._move_evaders()
        rewards += cfg.urgency_reward
        if cfg.shared_reward:
            rewards = np.full_like(rewards, rewards.mean())
        s.step += 1
        self.terminated = bool(n_caught == cfg.n_evaders or s.step >= cfg.max_cycles)
        obs = self.observe_all() if observe else []
        return StepResult(obs, rewards, self.terminated, {"step": s.step, "caught": n_caught})

    def random_actions(self, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 5, self.n_agents)
