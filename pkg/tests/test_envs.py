import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskmarl.envs import (
    ConfigError,
    EnvContractError,
    PursuitConfig,
    PursuitEnv,
    SpreadConfig,
    SpreadEnv,
    make_env,
    pursuit_observe,
    spread_observe,
)
from taskmarl.envs.pursuit import ALLY, EVADER, OBSTACLE, obstacle_map

FIXTURES = Path(__file__).parent / "fixtures"


def load_golden(name):
    with open(FIXTURES / name) as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ spread

def test_spread_reset_is_deterministic_per_seed():
    a, b = SpreadEnv(), SpreadEnv()
    sa, _ = a.reset(7)
    sb, _ = b.reset(7)
    np.testing.assert_array_equal(sa.agent_pos, sb.agent_pos)
    np.testing.assert_array_equal(sa.landmark_pos, sb.landmark_pos)
    s8, _ = SpreadEnv().reset(8)
    assert not np.array_equal(sa.agent_pos, s8.agent_pos)
    assert np.all(sa.agent_vel == 0.0)


def test_spread_reset_positions_are_uniform_on_the_square():
    env = SpreadEnv()
    pos = np.array([env.reset(s)[0].agent_pos for s in range(10_000)]).reshape(-1, 2)
    assert np.all(np.abs(pos) <= 1.0)
    assert np.all(np.abs(pos.mean(axis=0)) < 0.02)


def test_spread_agents_on_landmarks_earn_zero():
    env = SpreadEnv()
    s, _ = env.reset(0)
    s.landmark_pos = np.array([[-0.8, 0.0], [0.0, 0.0], [0.8, 0.0]])
    s.agent_pos = s.landmark_pos.copy()
    np.testing.assert_array_equal(env.rewards(), 0.0)


def test_spread_local_term_isolates_colliding_pair():
    env = SpreadEnv(SpreadConfig(local_ratio=1.0))
    s, _ = env.reset(0)
    s.agent_pos = np.array([[0.2, 0.2], [0.2, 0.2], [-0.9, -0.9]])
    np.testing.assert_array_equal(env.rewards(), [-1.0, -1.0, 0.0])


def test_spread_global_reward_shared_when_local_ratio_zero():
    env = SpreadEnv(SpreadConfig(local_ratio=0.0))
    env.reset(3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        r = env.step(env.random_actions(rng)).rewards
        assert np.all(r == r[0])


def test_spread_speed_decays_by_damping_without_action_or_contact():
    env = SpreadEnv()
    s, _ = env.reset(0)
    s.agent_pos = np.array([[-0.9, -0.9], [0.0, 0.0], [0.9, 0.9]])
    s.agent_vel = np.array([[0.3, -0.1], [0.0, 0.2], [-0.5, 0.0]])
    for _ in range(5):
        before = np.linalg.norm(env.state.agent_vel, axis=1)
        env.step([0, 0, 0])
        after = np.linalg.norm(env.state.agent_vel, axis=1)
        np.testing.assert_allclose(after, before * 0.75, rtol=1e-12)


def test_spread_action_integrates_force_after_position():
    env = SpreadEnv()
    s, _ = env.reset(0)
    s.agent_pos = np.array([[-0.9, -0.9], [0.0, 0.0], [0.9, 0.9]])
    env.step([2, 0, 0])  # +x: velocity gains sensitivity*dt, position unchanged this step
    np.testing.assert_allclose(env.state.agent_vel[0], [0.5, 0.0])
    np.testing.assert_allclose(env.state.agent_pos[0], [-0.9, -0.9])
    env.step([0, 0, 0])
    np.testing.assert_allclose(env.state.agent_pos[0], [-0.85, -0.9])


def test_spread_contact_pushes_overlapping_agents_apart():
    env = SpreadEnv()
    s, _ = env.reset(0)
    s.agent_pos = np.array([[0.0, 0.0], [0.1, 0.0], [0.9, 0.9]])
    f = env.contact_forces()
    assert f[0, 0] < 0 < f[1, 0]
    np.testing.assert_allclose(f[0], -f[1])
    np.testing.assert_allclose(f[2], 0.0, atol=1e-30)


def test_spread_terminates_and_refuses_further_steps():
    env = SpreadEnv(SpreadConfig(max_steps=3))
    env.reset(0)
    flags = [env.step([0, 0, 0]).terminated for _ in range(3)]
    assert flags == [False, False, True]
    with pytest.raises(EnvContractError):
        env.step([0, 0, 0])


def test_spread_rejects_bad_actions_and_configs():
    env = SpreadEnv()
    env.reset(0)
    with pytest.raises(EnvContractError):
        env.step([0, 5, 0])
    with pytest.raises(ValueError, match="n_agents"):
        SpreadConfig(n_agents=1)
    with pytest.raises(ValueError, match="local_ratio"):
        SpreadConfig(local_ratio=1.5)


def test_spread_observation_geometry():
    env = SpreadEnv(SpreadConfig(n_agents=15))
    s, obs = env.reset(1)
    assert obs[0].landmarks.shape == (15, 2) and obs[0].allies.shape == (14, 2)
    s.agent_pos[1] = s.agent_pos[0]
    s.landmark_pos[4] = s.agent_pos[0]
    o0, o1 = spread_observe(s, 0), spread_observe(s, 1)
    np.testing.assert_array_equal(o0.landmarks[4], [0.0, 0.0])
    np.testing.assert_array_equal(o0.allies[0], -o1.allies[0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), actions=st.lists(st.integers(0, 4), min_size=75, max_size=75))
def test_spread_trajectory_determined_by_seed_and_actions(seed, actions):
    runs = []
    for _ in range(2):
        env = SpreadEnv()
        env.reset(seed)
        runs.append([env.step(actions[3 * t:3 * t + 3]).rewards for t in range(25)])
    np.testing.assert_array_equal(np.array(runs[0]), np.array(runs[1]))
    assert np.all(np.isfinite(runs[0]))


def test_spread_replays_reference_fixture_episodes_exactly():
    """Same seeds and action draws as the capture tool reproduce its returns."""
    rows = load_golden("golden_spread.csv")[:40]
    env = SpreadEnv()
    rng = np.random.default_rng(0)
    for row in rows:
        env.reset(int(row["seed"]))
        total, done = np.zeros(3), False
        while not done:
            res = env.step([int(rng.integers(5)) for _ in range(3)], observe=False)
            total += res.rewards
            done = res.terminated
        assert total.mean() == pytest.approx(float(row["mean_agent_return"]), abs=1e-9)


# ------------------------------------------------------------------ pursuit

def small_pursuit(**kw):
    cfg = dict(grid_w=6, grid_h=6, n_pursuers=2, n_evaders=1, obstacle="none", stacking=False)
    cfg.update(kw)
    env = PursuitEnv(PursuitConfig(**cfg))
    env.reset(0)
    return env


def place(env, pursuers, evaders):
    s = env.state
    s.pursuers = np.array(pursuers, dtype=np.int64)
    s.evaders = np.array(evaders, dtype=np.int64)
    s.alive = np.ones(len(evaders), dtype=bool)
    s.last_move = np.zeros_like(s.pursuers)


def test_pursuit_reset_defaults_and_determinism():
    env = PursuitEnv()
    s1, obs = env.reset(5)
    assert len(s1.pursuers) == 8 and len(s1.evaders) == 30 and len(obs) == 8
    assert not s1.obstacle[s1.pursuers[:, 0], s1.pursuers[:, 1]].any()
    assert not s1.obstacle[s1.evaders[:, 0], s1.evaders[:, 1]].any()
    p1, e1 = s1.pursuers.copy(), s1.evaders.copy()
    s2, _ = PursuitEnv().reset(5)
    np.testing.assert_array_equal(p1, s2.pursuers)
    np.testing.assert_array_equal(e1, s2.evaders)


def test_pursuit_exclusive_mode_places_on_distinct_cells():
    env = PursuitEnv(PursuitConfig(stacking=False))
    s, _ = env.reset(9)
    cells = {tuple(c) for c in np.vstack([s.pursuers, s.evaders])}
    assert len(cells) == 38


def test_pursuit_rectangle_obstacle_shape():
    m = obstacle_map(PursuitConfig())
    assert m.sum() == 7 * 9  # x in 5..11, y in 4..12 on the 16x16 grid
    assert m[5:12, 4:13].all()
    assert obstacle_map(PursuitConfig(obstacle="center2x2")).sum() == 4


def test_pursuit_infeasible_grid_is_config_error():
    with pytest.raises(ConfigError):
        PursuitEnv(PursuitConfig(grid_w=3, grid_h=3, n_pursuers=5, n_evaders=6, obstacle="none", stacking=False))


def test_pursuit_config_validation_names_field():
    with pytest.raises(ValueError, match="obs_range"):
        PursuitConfig(obs_range=6)
    with pytest.raises(ValueError, match="n_evaders"):
        PursuitConfig(n_evaders=0)


def test_pursuit_corner_evader_caught_by_two_pursuers():
    env = small_pursuit(catch_reward=5.0, tag_reward=0.01, urgency_reward=-0.1)
    place(env, [[1, 1], [0, 2]], [[0, 0]])
    res = env.step([4, 4])  # (1,1)->(1,0) and (0,2)->(0,1): both neighbours of the corner
    assert not env.state.alive[0] and res.terminated
    np.testing.assert_allclose(res.rewards, [5.0 + 0.01 - 0.1] * 2)


def test_pursuit_urgency_only_when_nobody_adjacent():
    env = small_pursuit(max_cycles=50)
    place(env, [[0, 0], [5, 5]], [[3, 3]])
    res = env.step([0, 0])
    np.testing.assert_array_equal(res.rewards, [-0.1, -0.1])


def test_pursuit_tag_reward_for_adjacent_pursuer():
    env = small_pursuit(max_cycles=50)
    place(env, [[2, 3], [5, 5]], [[3, 3]])
    res = env.step([0, 0])
    np.testing.assert_allclose(res.rewards, [0.01 - 0.1, -0.1])


def test_pursuit_exclusive_conflict_lower_index_wins():
    env = small_pursuit(n_evaders=1)
    place(env, [[1, 2], [3, 2]], [[5, 5]])
    env.step([1, 2])  # both aim at (2, 2)
    np.testing.assert_array_equal(env.state.pursuers, [[2, 2], [3, 2]])
    np.testing.assert_array_equal(env.state.last_move, [[1, 0], [0, 0]])


def test_pursuit_wall_blocks_move():
    env = small_pursuit()
    place(env, [[0, 0], [5, 5]], [[3, 3]])
    env.step([2, 1])  # -x off the grid, +x off the grid
    np.testing.assert_array_equal(env.state.pursuers, [[0, 0], [5, 5]])


def test_pursuit_observation_channels_and_walls():
    env = small_pursuit(n_pursuers=2, n_evaders=1)
    place(env, [[2, 2], [2, 4]], [[3, 2]])
    o = pursuit_observe(env.state, 0, 3)
    assert o.window[EVADER, 2, 1]  # one cell east -> (center+1, center)
    assert not o.window[OBSTACLE].any()
    assert not o.window[ALLY].any()  # ally two cells away, outside 3x3
    corner = pursuit_observe(env.state, 0, 7)
    assert corner.window[OBSTACLE, 0, :].all()  # x = -1 is off-grid
    assert corner.window[ALLY, 3, 5]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pursuit_small_window_is_central_crop_of_large(seed):
    env = PursuitEnv()
    s, _ = env.reset(seed)
    for i in range(8):
        big = pursuit_observe(s, i, 9).window
        small = pursuit_observe(s, i, 5).window
        np.testing.assert_array_equal(small, big[:, 2:7, 2:7])


@pytest.mark.parametrize("stacking", [True, False])
def test_pursuit_invariants_under_random_play(stacking):
    env = PursuitEnv(PursuitConfig(stacking=stacking, max_cycles=150))
    env.reset(11)
    rng = np.random.default_rng(0)
    alive = env.state.alive.sum()
    done = False
    while not done:
        res = env.step(env.random_actions(rng))
        s = env.state
        assert s.alive.sum() <= alive
        alive = s.alive.sum()
        assert len(s.pursuers) == 8
        assert not s.obstacle[s.pursuers[:, 0], s.pursuers[:, 1]].any()
        live = s.evaders[s.alive]
        assert not s.obstacle[live[:, 0], live[:, 1]].any()
        assert np.all(res.rewards >= -0.1 - 1e-12)
        if not stacking:
            assert len({tuple(p) for p in s.pursuers}) == 8
            assert len({tuple(e) for e in live}) == len(live)
        done = res.terminated


def test_pursuit_trajectory_determined_by_seed_and_actions():
    acts = np.random.default_rng(3).integers(0, 5, (60, 8))
    runs = []
    for _ in range(2):
        env = PursuitEnv()
        env.reset(4)
        runs.append([env.step(a, observe=False).rewards for a in acts])
    np.testing.assert_array_equal(np.array(runs[0]), np.array(runs[1]))


def test_pursuit_shared_reward_gives_everyone_the_mean_and_keeps_the_sum():
    def run(shared):
        env = PursuitEnv(PursuitConfig(shared_reward=shared, max_cycles=40))
        env.reset(2)
        rng = np.random.default_rng(1)
        return np.array([env.step(env.random_actions(rng), observe=False).rewards for _ in range(40)])

    local, shared = run(False), run(True)
    np.testing.assert_allclose(shared.sum(axis=1), local.sum(axis=1), atol=1e-12)
    assert np.all(shared == shared[:, :1])


def test_pursuit_terminated_episode_refuses_step():
    env = small_pursuit(max_cycles=1)
    env.step([0, 0])
    with pytest.raises(EnvContractError):
        env.step([0, 0])


def test_pursuit_random_team_return_matches_reference_fixture():
    """Team return (sum over pursuers) agrees with the reference suite statistically."""
    rows = load_golden("golden_pursuit.csv")
    ref = np.array([float(r["mean_agent_return"]) for r in rows]) * 8
    env = PursuitEnv()
    rng = np.random.default_rng(0)
    ours = []
    for ep in range(80):
        env.reset(ep)
        total, done = 0.0, False
        while not done:
            res = env.step(env.random_actions(rng), observe=False)
            total += res.rewards.sum()
            done = res.terminated
        ours.append(total)
    ours = np.array(ours)
    se = np.sqrt(ours.var() / len(ours) + ref.var() / len(ref))
    assert abs(ours.mean() - ref.mean()) < 4 * se
    assert abs(ours.mean() - ref.mean()) / abs(ref.mean()) < 0.03


def test_make_env_dispatch():
    assert isinstance(make_env(SpreadConfig()), SpreadEnv)
    assert isinstance(make_env(PursuitConfig()), PursuitEnv)
    with pytest.raises(TypeError):
        make_env(object())
