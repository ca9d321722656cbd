"""Expert task layer: observations -> candidate tasks, chosen task -> env action.

A task vector is ``[one-hot kind code..., distance, sin(bearing), cos(bearing),
own motion x, own motion y]``.  Spread tasks have 7 entries (2-way code),
Pursuit tasks have 8 (3-way code).  Feature vectors never depend on how many
entities exist; only the number of tasks does.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from taskmarl.envs.pursuit import ALLY, EVADER, OBSTACLE, PURSUIT_MOVES, PursuitObservation
from taskmarl.envs.spread import SPREAD_ACTIONS, SpreadObservation


class TaskError(ValueError):
    """A converter was handed a task of the wrong kind."""


class TaskKind(enum.IntEnum):
    GO_LANDMARK = 0
    AVOID_COLLISION = 1
    EXPLORE = 2
    PURSUE_EVADER = 3
    FOLLOW_ALLY = 4


SPREAD_KINDS = (TaskKind.GO_LANDMARK, TaskKind.AVOID_COLLISION)
PURSUIT_KINDS = (TaskKind.EXPLORE, TaskKind.PURSUE_EVADER, TaskKind.FOLLOW_ALLY)
SPREAD_TASK_DIM = 7
PURSUIT_TASK_DIM = 8

# PD gains for the go-to-landmark controller (no integral term).  One action
# changes velocity by 0.5, so braking must start late: larger KD chatters short
# of the landmark.
KP, KD, DEADBAND = 1.0, 0.2, 0.05
# pursuit distances are divided by the half-width of the 7x7 training window,
# so the same neighbourhood yields the same features under any window size
DISTANCE_SCALE = 3.0
SPLIT_RADIUS = 2
SPLIT_PENALTY = 0.5
TIE_TOL = 1e-9

# Explore directions in task order: E, N, W, S as (dx, dy), and their actions
EXPLORE_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))
EXPLORE_ACTIONS = (1, 3, 2, 4)


def _code(kind: TaskKind) -> tuple[float, ...]:
    group = SPREAD_KINDS if kind in SPREAD_KINDS else PURSUIT_KINDS
    return tuple(1.0 if k == kind else 0.0 for k in group)


def _bearing(dx: float, dy: float) -> tuple[float, float]:
    if dx == 0 and dy == 0:
        return 0.0, 1.0
    a = math.atan2(dy, dx)
    return math.sin(a), math.cos(a)


@dataclass(frozen=True)
class Task:
    kind: TaskKind
    features: np.ndarray
    target: Any = None

    @property
    def type_code(self) -> np.ndarray:
        return self.features[: len(_code(self.kind))]


@dataclass
class TaskSet:
    """Tasks for one agent at one step, stored row-wise for the policy."""

    features: np.ndarray  # [T, d]
    kinds: tuple[TaskKind, ...]
    targets: tuple

    def __post_init__(self):
        if len(self.kinds) == 0:
            raise TaskError("a TaskSet must hold at least one task")

    def __len__(self) -> int:
        return len(self.kinds)

    def __getitem__(self, i: int) -> Task:
        return Task(self.kinds[i], self.features[i], self.targets[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def permuted(self, perm) -> "TaskSet":
        perm = list(perm)
        return TaskSet(self.features[perm], tuple(self.kinds[i] for i in perm),
                       tuple(self.targets[i] for i in perm))


# ------------------------------------------------------------------ generators

def gen_tasks_spread(obs: SpreadObservation) -> TaskSet:
    vx, vy = obs.velocity
    rows, kinds, targets = [], [], []
    for k, (dx, dy) in enumerate(obs.landmarks):
        s, c = _bearing(dx, dy)
        rows.append((1.0, 0.0, math.hypot(dx, dy), s, c, vx, vy))
        kinds.append(TaskKind.GO_LANDMARK)
        targets.append(k)
    for k, (dx, dy) in enumerate(obs.allies):
        s, c = _bearing(dx, dy)
        rows.append((0.0, 1.0, math.hypot(dx, dy), s, c, vx, vy))
        kinds.append(TaskKind.AVOID_COLLISION)
        targets.append(k)
    return TaskSet(np.array(rows, dtype=np.float64), tuple(kinds), tuple(targets))


def gen_tasks_pursuit(obs: PursuitObservation, last_move=None) -> TaskSet:
    """Four Explore tasks, then one task per visible evader cell and per ally cell.

    ``last_move`` (defaulting to the observation's) stands in for velocity on
    the grid.  Targets are ``(dx, dy)`` offsets from the agent.
    """
    mx, my = (obs.last_move if last_move is None else last_move)
    mx, my = float(mx), float(my)
    half = obs.half
    rows, kinds, targets = [], [], []
    for (dx, dy) in EXPLORE_DIRS:
        rows.append((1.0, 0.0, 0.0, 1.0, float(dy), float(dx), mx, my))
        kinds.append(TaskKind.EXPLORE)
        targets.append((dx, dy))
    for channel, kind, code in ((EVADER, TaskKind.PURSUE_EVADER, (0.0, 1.0, 0.0)),
                                (ALLY, TaskKind.FOLLOW_ALLY, (0.0, 0.0, 1.0))):
        xs, ys = np.nonzero(obs.window[channel])
        for wx, wy in zip(xs, ys):
            dx, dy = int(wx) - half, int(wy) - half
            s, c = _bearing(dx, dy)
            rows.append(code + (max(abs(dx), abs(dy)) / DISTANCE_SCALE, s, c, mx, my))
            kinds.append(kind)
            targets.append((dx, dy))
    return TaskSet(np.array(rows, dtype=np.float64), tuple(kinds), tuple(targets))


# ------------------------------------------------------------------ converters

def _best_by_dot(direction: np.ndarray, actions: np.ndarray) -> int:
    dots = actions @ direction
    return int(np.flatnonzero(dots >= dots.max() - TIE_TOL)[0])


def _require(task: Task, kind: TaskKind) -> None:
    if task.kind != kind:
        raise TaskError(f"expected a {kind.name} task, got {task.kind.name}")


def convert_spread_go_landmark(task: Task, obs: SpreadObservation) -> int:
    """PD steering toward the landmark, snapped to the best axis action."""
    _require(task, TaskKind.GO_LANDMARK)
    error = obs.landmarks[task.target]
    force = KP * error - KD * obs.velocity
    if np.hypot(*force) < DEADBAND:
        return 0
    return _best_by_dot(force, SPREAD_ACTIONS)


def convert_spread_avoid(task: Task, obs: SpreadObservation) -> int:
    """Sidestep counterclockwise-perpendicular to the ally's bearing."""
    _require(task, TaskKind.AVOID_COLLISION)
    dx, dy = obs.allies[task.target]
    s, c = _bearing(dx, dy)
    return _best_by_dot(np.array([-s, c]), SPREAD_ACTIONS)


def convert_pursuit_explore(task: Task) -> int:
    _require(task, TaskKind.EXPLORE)
    return EXPLORE_ACTIONS[EXPLORE_DIRS.index(tuple(task.target))]


def _landing_cells(obs: PursuitObservation) -> np.ndarray:
    """Cell (relative to the agent) each action ends in; blocked moves stay put."""
    half = obs.half
    cells = PURSUIT_MOVES.copy()
    for a, (dx, dy) in enumerate(PURSUIT_MOVES):
        if obs.window[OBSTACLE, half + dx, half + dy]:
            cells[a] = (0, 0)
    return cells


def _argmin_first(scores: np.ndarray) -> int:
    return int(np.flatnonzero(scores <= scores.min() + TIE_TOL)[0])


def convert_pursuit_pursue(task: Task, obs: PursuitObservation) -> int:
    """Close in on the evader (Manhattan), holding once adjacent; avoid crowding allies.

    Landing on the evader's own cell scores like holding next to it.  When an
    ally is within ``SPLIT_RADIUS`` cells, landing cardinal-adjacent to it
    costs ``SPLIT_PENALTY``.
    """
    _require(task, TaskKind.PURSUE_EVADER)
    tx, ty = task.target
    cells = _landing_cells(obs)
    scores = np.maximum(np.abs(cells[:, 0] - tx) + np.abs(cells[:, 1] - ty), 1).astype(np.float64)
    half = obs.half
    for wx, wy in zip(*np.nonzero(obs.window[ALLY])):
        ax, ay = int(wx) - half, int(wy) - half
        if max(abs(ax), abs(ay)) <= SPLIT_RADIUS:
            adjacent = (np.abs(cells[:, 0] - ax) + np.abs(cells[:, 1] - ay)) == 1
            scores += SPLIT_PENALTY * adjacent
    return _argmin_first(scores)


def convert_pursuit_follow(task: Task, obs: PursuitObservation) -> int:
    """Close in on the ally (Manhattan) without stepping onto its cell."""
    _require(task, TaskKind.FOLLOW_ALLY)
    tx, ty = task.target
    cells = _landing_cells(obs)
    dist = (np.abs(cells[:, 0] - tx) + np.abs(cells[:, 1] - ty)).astype(np.float64)
    moved = np.any(cells != 0, axis=1)
    dist[moved & (dist == 0)] = np.inf
    return _argmin_first(dist)


def convert(task: Task, obs) -> int:
    """Dispatch to the converter for ``task.kind``."""
    if task.kind == TaskKind.GO_LANDMARK:
        return convert_spread_go_landmark(task, obs)
    if task.kind == TaskKind.AVOID_COLLISION:
        return convert_spread_avoid(task, obs)
    if task.kind == TaskKind.EXPLORE:
        return convert_pursuit_explore(task)
    if task.kind == TaskKind.PURSUE_EVADER:
        return convert_pursuit_pursue(task, obs)
    return convert_pursuit_follow(task, obs)


def gen_tasks(obs) -> TaskSet:
    if isinstance(obs, SpreadObservation):
        return gen_tasks_spread(obs)
    if isinstance(obs, PursuitObservation):
        return gen_tasks_pursuit(obs)
    raise TypeError(f"no task generator for {type(obs).__name__}")
