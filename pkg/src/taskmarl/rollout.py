"""Lockstep episode runner shared by training and evaluation.

All environments of a wave advance together so one batched forward pass scores
every live agent's task set.  Episodes always run to termination.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from taskmarl.envs import PursuitConfig, make_env
from taskmarl.policy import AttentionPolicy


def episode_seed(base: int, *keys: int) -> int:
    """Independent 63-bit seed for the stream named by ``(base, *keys)``."""
    return int(np.random.SeedSequence([base, *keys]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def episode_score(env_config, agent_returns: np.ndarray) -> float:
    """Headline score of one episode from per-agent undiscounted returns.

    Spread scores the mean over agents.  Pursuit scores the team total, the
    quantity its published baselines are quoted in.
    """
    agent_returns = np.asarray(agent_returns, dtype=np.float64)
    if isinstance(env_config, PursuitConfig):
        return float(agent_returns.sum())
    return float(agent_returns.mean())


@dataclass
class Trajectories:
    """Per-transition arrays for one batch of complete episodes.

    ``stream`` identifies the (episode, agent) sequence a transition belongs
    to; transitions of a stream are contiguous and in time order.
    """

    features: list[np.ndarray] = field(default_factory=list)
    chosen: list[int] = field(default_factory=list)
    log_prob: list[float] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    reward: list[float] = field(default_factory=list)
    done: list[bool] = field(default_factory=list)
    agent: list[int] = field(default_factory=list)
    step: list[int] = field(default_factory=list)
    stream: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.chosen)


@dataclass
class EpisodeBatch:
    scores: np.ndarray  # [E] headline score per episode
    agent_returns: list[np.ndarray]
    trajectories: Trajectories | None = None


def run_random(env_config, seeds, rng: np.random.Generator) -> EpisodeBatch:
    """Uniform-random actions for every agent at every step."""
    returns = []
    env = make_env(env_config)
    for s in seeds:
        env.reset(int(s))
        total = np.zeros(env.n_agents)
        done = False
        while not done:
            res = env.step(env.random_actions(rng), observe=False)
            total += res.rewards
            done = res.terminated
        returns.append(total)
    return EpisodeBatch(np.array([episode_score(env_config, r) for r in returns]), returns)


def run_policy(env_config, seeds, policy: AttentionPolicy, mode: str,
               rng: np.random.Generator | None = None, record: bool = False) -> EpisodeBatch:
    """Run one episode per seed, all in lockstep, with actions chosen by ``policy``."""
    envs = [make_env(env_config) for _ in seeds]
    n = envs[0].n_agents
    obs = [env.reset(int(s))[1] for env, s in zip(envs, seeds)]
    totals = np.zeros((len(envs), n))
    live = list(range(len(envs)))
    traj = Trajectories() if record else None
    # one open list of transition indices per (env, agent) stream
    pending: dict[tuple[int, int], list[int]] = {}
    t = 0
    while live:
        flat = [o for e in live for o in obs[e]]
        results = policy.act_batch(flat, mode, rng)
        still = []
        for k, e in enumerate(live):
            acts = results[k * n:(k + 1) * n]
            res = envs[e].step([a.action for a in acts])
            totals[e] += res.rewards
            obs[e] = res.observations
            if record:
                for i, a in enumerate(acts):
                    pending.setdefault((e, i), []).append(len(traj))
                    traj.features.append(a.tasks.features)
                    traj.chosen.append(a.task_index)
                    traj.log_prob.append(a.log_prob)
                    traj.value.append(a.value)
                    traj.reward.append(float(res.rewards[i]))
                    traj.done.append(res.terminated)
                    traj.agent.append(i)
                    traj.step.append(t)
            if not res.terminated:
                still.append(e)
        live = still
        t += 1
    if record:
        traj = _reorder_by_stream(traj, [pending[(e, i)] for e in range(len(envs)) for i in range(n)])
    returns = list(totals)
    return EpisodeBatch(np.array([episode_score(env_config, r) for r in returns]), returns, traj)


def _reorder_by_stream(traj: Trajectories, streams: list[list[int]]) -> Trajectories:
    out = Trajectories()
    for sid, idx in enumerate(streams):
        for j in idx:
            out.features.append(traj.features[j])
            out.chosen.append(traj.chosen[j])
            out.log_prob.append(traj.log_prob[j])
            out.value.append(traj.value[j])
            out.reward.append(traj.reward[j])
            out.done.append(traj.done[j])
            out.agent.append(traj.agent[j])
            out.step.append(traj.step[j])
            out.stream.append(sid)
    return out
