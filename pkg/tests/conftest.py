from pathlib import Path

import numpy as np

from taskmarl.envs import PursuitObservation, SpreadObservation
from taskmarl.envs.pursuit import ALLY, EVADER, OBSTACLE
from taskmarl.tasks import TaskKind, gen_tasks

FIXTURES = Path(__file__).parent / "fixtures"

KIND_OF = {"go_landmark": TaskKind.GO_LANDMARK, "avoid_collision": TaskKind.AVOID_COLLISION,
           "explore": TaskKind.EXPLORE, "pursue_evader": TaskKind.PURSUE_EVADER,
           "follow_ally": TaskKind.FOLLOW_ALLY}


def spread_obs(landmarks=(), allies=(), velocity=(0.0, 0.0)) -> SpreadObservation:
    lm = np.array(landmarks, dtype=np.float64).reshape(-1, 2)
    al = np.array(allies, dtype=np.float64).reshape(-1, 2)
    return SpreadObservation(np.zeros(2), np.array(velocity, dtype=np.float64), lm, al,
                             tuple(range(1, len(al) + 1)))


def pursuit_obs(obs_range=7, obstacles=(), evaders=(), allies=(), last_move=(0, 0)) -> PursuitObservation:
    half = obs_range // 2
    w = np.zeros((3, obs_range, obs_range), dtype=bool)
    for channel, cells in ((OBSTACLE, obstacles), (EVADER, evaders), (ALLY, allies)):
        for dx, dy in cells:
            w[channel, half + dx, half + dy] = True
    return PursuitObservation(w, np.array(last_move, dtype=np.int64))


def scenario_case(sc: dict):
    """(task, observation) in package types for a converter scenario."""
    kind = KIND_OF[sc["kind"]]
    if kind == TaskKind.GO_LANDMARK:
        obs = spread_obs([sc["target"]], [(5.0, 5.0)], sc["velocity"])
        target = 0
    elif kind == TaskKind.AVOID_COLLISION:
        obs = spread_obs([(0.5, 0.5)], [sc["ally"]])
        target = 0
    elif kind == TaskKind.EXPLORE:
        obs = pursuit_obs()
        target = ((1, 0), (0, 1), (-1, 0), (0, -1))[sc["direction"]]
    else:
        obs = pursuit_obs(sc["obs_range"], sc["obstacles"], sc["evaders"], sc["allies"])
        target = tuple(sc["target"])
    ts = gen_tasks(obs)
    matches = [t for t in ts if t.kind == kind and t.target == target]
    assert len(matches) == 1, f"scenario {sc['id']}: task not generated"
    return matches[0], obs


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (s.startswith("supplementary"), int(s.split()[1]))):
            terminalreporter.write_line(line)
