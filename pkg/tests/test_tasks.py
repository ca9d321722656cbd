import csv
import math

import numpy as np
import pytest
from conftest import FIXTURES, pursuit_obs, scenario_case, spread_obs
from converter_scenarios import N_SCENARIOS, scenario
from hypothesis import given, settings
from hypothesis import strategies as st

from taskmarl.envs import PursuitConfig, PursuitEnv, SpreadConfig, SpreadEnv, pursuit_observe
from taskmarl.tasks import (
    DISTANCE_SCALE,
    KD,
    KP,
    PURSUIT_TASK_DIM,
    SPREAD_TASK_DIM,
    Task,
    TaskError,
    TaskKind,
    TaskSet,
    convert,
    convert_pursuit_explore,
    convert_pursuit_follow,
    convert_pursuit_pursue,
    convert_spread_avoid,
    convert_spread_go_landmark,
    gen_tasks,
    gen_tasks_pursuit,
    gen_tasks_spread,
)

CODES = {TaskKind.GO_LANDMARK: [1, 0], TaskKind.AVOID_COLLISION: [0, 1], TaskKind.EXPLORE: [1, 0, 0],
         TaskKind.PURSUE_EVADER: [0, 1, 0], TaskKind.FOLLOW_ALLY: [0, 0, 1]}


def check_task_invariants(ts: TaskSet, dim: int):
    assert len(ts) >= 1 and ts.features.shape == (len(ts), dim)
    for t in ts:
        np.testing.assert_array_equal(t.type_code, CODES[t.kind])
        s, c = t.features[len(CODES[t.kind]) + 1: len(CODES[t.kind]) + 3]
        assert abs(s * s + c * c - 1.0) < 1e-9


# ------------------------------------------------------------------ generators

def test_spread_generator_counts_and_invariants():
    for n in (3, 15):
        env = SpreadEnv(SpreadConfig(n_agents=n))
        _, obs = env.reset(0)
        ts = gen_tasks_spread(obs[0])
        assert len(ts) == 2 * n - 1
        assert ts.kinds.count(TaskKind.GO_LANDMARK) == n
        check_task_invariants(ts, SPREAD_TASK_DIM)


def test_spread_landmark_due_east_features():
    ts = gen_tasks_spread(spread_obs([(0.5, 0.0)], [(3.0, 3.0)]))
    np.testing.assert_allclose(ts.features[0], [1, 0, 0.5, 0, 1, 0, 0], atol=1e-15)


def test_spread_features_do_not_depend_on_team_size():
    small = gen_tasks_spread(spread_obs([(0.3, -0.4)], [(0.1, 0.2)], (0.2, 0.1)))
    big = gen_tasks_spread(spread_obs([(0.3, -0.4)] + [(0.9, 0.9)] * 5, [(0.1, 0.2)] * 4, (0.2, 0.1)))
    np.testing.assert_array_equal(small.features[0], big.features[0])
    np.testing.assert_array_equal(small.features[1], big.features[-1])


def test_pursuit_generator_empty_window_has_four_explore_tasks():
    ts = gen_tasks_pursuit(pursuit_obs())
    assert ts.kinds == (TaskKind.EXPLORE,) * 4
    np.testing.assert_allclose(ts.features[:, 3], 1.0)
    check_task_invariants(ts, PURSUIT_TASK_DIM)


def test_pursuit_generator_counts_entities():
    ts = gen_tasks_pursuit(pursuit_obs(evaders=[(1, 0), (-2, 2)], allies=[(0, -1)]))
    assert len(ts) == 7
    assert ts.kinds.count(TaskKind.PURSUE_EVADER) == 2
    assert ts.kinds.count(TaskKind.FOLLOW_ALLY) == 1


@pytest.mark.parametrize("obs_range", [5, 7, 9])
def test_pursuit_distance_normalization_is_fov_independent(obs_range):
    edge = (3, 0) if obs_range >= 7 else (2, 0)
    ts = gen_tasks_pursuit(pursuit_obs(obs_range, evaders=[edge]))
    assert ts.features[4, 3] == pytest.approx(max(map(abs, edge)) / DISTANCE_SCALE)
    if obs_range == 7:
        assert ts.features[4, 3] == 1.0  # the 7x7 window edge


def test_pursuit_features_identical_across_window_sizes():
    env = PursuitEnv()
    state, _ = env.reset(4)
    for i in range(8):
        sets = {r: gen_tasks_pursuit(pursuit_observe(state, i, r)) for r in (5, 7, 9)}
        rows = {r: {tuple(f) for f in ts.features} for r, ts in sets.items()}
        assert rows[5] <= rows[7] <= rows[9]  # bigger windows only add entities


def test_pursuit_last_move_is_the_velocity_feature():
    ts = gen_tasks_pursuit(pursuit_obs(last_move=(0, -1)))
    np.testing.assert_array_equal(ts.features[:, 6:], [[0, -1]] * 4)


def test_empty_task_set_rejected():
    with pytest.raises(TaskError):
        TaskSet(np.zeros((0, 7)), (), ())


def test_gen_tasks_dispatch_rejects_unknown_observation():
    with pytest.raises(TypeError):
        gen_tasks(object())


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 15))
def test_every_spread_task_converts_to_a_legal_action(seed, n):
    env = SpreadEnv(SpreadConfig(n_agents=n))
    _, obs = env.reset(seed)
    for o in obs:
        ts = gen_tasks(o)
        check_task_invariants(ts, SPREAD_TASK_DIM)
        assert all(0 <= convert(t, o) < 5 for t in ts)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), obs_range=st.sampled_from([3, 5, 7, 9]))
def test_every_pursuit_task_converts_to_a_legal_action(seed, obs_range):
    env = PursuitEnv(PursuitConfig(obs_range=obs_range))
    _, obs = env.reset(seed)
    for o in obs:
        ts = gen_tasks(o)
        check_task_invariants(ts, PURSUIT_TASK_DIM)
        assert all(0 <= convert(t, o) < 5 for t in ts)


# ------------------------------------------------------------------ converters

def go(target, velocity=(0.0, 0.0)):
    obs = spread_obs([target], [(4.0, 4.0)], velocity)
    return convert_spread_go_landmark(gen_tasks(obs)[0], obs)


def test_go_landmark_examples():
    assert go((0.0, 0.0)) == 0
    assert go((1.0, 0.0)) == 2
    assert go((0.1, 0.0), (2.0, 0.0)) == 1  # braking
    assert go((0.5, 0.5)) == 2  # diagonal tie -> lower index (+x)


def test_go_landmark_gains():
    assert (KP, KD) == (1.0, 0.2)


def avoid(ally):
    obs = spread_obs([(0.5, 0.5)], [ally])
    return convert_spread_avoid(gen_tasks(obs)[1], obs)


def test_avoid_examples():
    assert avoid((1.0, 0.0)) == 4
    assert avoid((0.0, 1.0)) == 1
    assert avoid((1.0, 1.0)) == 1  # 135 degrees: -x and +y tie, -x wins


def test_explore_is_a_bijection_onto_moves():
    ts = gen_tasks_pursuit(pursuit_obs())
    actions = [convert_pursuit_explore(t) for t in ts]
    assert actions == [1, 3, 2, 4]


def pursue(**kw):
    obs = pursuit_obs(**kw)
    task = next(t for t in gen_tasks(obs) if t.kind == TaskKind.PURSUE_EVADER)
    return convert_pursuit_pursue(task, obs)


def follow(**kw):
    obs = pursuit_obs(**kw)
    task = next(t for t in gen_tasks(obs) if t.kind == TaskKind.FOLLOW_ALLY)
    return convert_pursuit_follow(task, obs)


def test_pursue_examples():
    assert pursue(evaders=[(3, 0)]) == 1
    assert pursue(evaders=[(2, 1)], allies=[(2, 0)]) == 3  # flank around the ally
    assert pursue(evaders=[(0, 1)]) == 0  # already adjacent: hold


def test_follow_examples():
    assert follow(allies=[(0, 3)]) == 3
    assert follow(allies=[(1, 0)]) == 0
    assert follow(allies=[(1, 1)]) == 1


def test_converters_reject_wrong_kind():
    obs = spread_obs([(1.0, 0.0)], [(0.0, 1.0)])
    ts = gen_tasks(obs)
    with pytest.raises(TaskError):
        convert_spread_go_landmark(ts[1], obs)
    with pytest.raises(TaskError):
        convert_spread_avoid(ts[0], obs)
    with pytest.raises(TaskError):
        convert_pursuit_explore(ts[0])
    with pytest.raises(TaskError):
        convert_pursuit_pursue(Task(TaskKind.FOLLOW_ALLY, np.zeros(8), (1, 0)), pursuit_obs())


def test_pd_controller_reaches_landmark_from_random_starts():
    env = SpreadEnv(SpreadConfig(n_agents=2))
    for trial in range(40):
        s, _ = env.reset(trial)
        s.agent_pos[1] = [50.0, 50.0]  # keep the other agent out of the way
        for _ in range(25):
            o = env.observe_all()[0]
            env.step([convert(gen_tasks(o)[0], o), 0])
            if np.linalg.norm(env.state.agent_pos[0] - s.landmark_pos[0]) <= 0.1:
                break
        assert np.linalg.norm(env.state.agent_pos[0] - s.landmark_pos[0]) <= 0.1, trial


# ------------------------------------------------------------------ oracle fixture

def load_oracle():
    with open(FIXTURES / "converter_oracle.csv") as fh:
        return list(csv.DictReader(fh))


def test_oracle_fixture_covers_every_kind():
    rows = load_oracle()
    assert len(rows) == N_SCENARIOS
    assert {r["kind"] for r in rows} == {"go_landmark", "avoid_collision", "explore", "pursue_evader",
                                         "follow_ally"}


@pytest.mark.parametrize("row", load_oracle(), ids=lambda r: f"{r['kind']}-{r['scenario_id']}")
def test_converter_matches_enumeration_oracle(row):
    sc = scenario(int(row["scenario_id"]))
    assert sc["kind"] == row["kind"] and sc["env"] == row["env"]
    task, obs = scenario_case(sc)
    assert convert(task, obs) == int(row["expected_action"])


def test_avoid_direction_is_counterclockwise_perpendicular():
    for deg in range(0, 360, 15):
        a = math.radians(deg)
        act = avoid((math.cos(a), math.sin(a)))
        perp = np.array([math.cos(a + math.pi / 2), math.sin(a + math.pi / 2)])
        units = np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]])
        assert units[act] @ perp == pytest.approx((units @ perp).max())
