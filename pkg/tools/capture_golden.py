"""Capture random-policy returns from the PettingZoo reference environments.

Writes the golden fixture CSV consumed by the test suite::

    env,config_hash,seed,episode,mean_agent_return

Needs ``pettingzoo==1.24.0`` and ``gymnasium`` importable.  ``pygame`` is only
touched for rendering; if it is missing, put a stub package on PYTHONPATH.

Usage::

    python tools/capture_golden.py --env spread --episodes 1500 --out tests/fixtures/golden_spread.csv
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import time

import numpy as np

REFERENCE_KWARGS = {
    "spread": {"N": 3, "local_ratio": 0.5, "max_cycles": 25, "continuous_actions": False},
    "pursuit": {
        "x_size": 16,
        "y_size": 16,
        "n_pursuers": 8,
        "n_evaders": 30,
        "obs_range": 7,
        "max_cycles": 500,
        "catch_reward": 5.0,
        "tag_reward": 0.01,
        "urgency_reward": -0.1,
        "shared_reward": True,
        "surround": True,
    },
}


def reference_hash(env: str) -> str:
    blob = json.dumps({"env": env, **REFERENCE_KWARGS[env]}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def spread_episode(env, seed: int, rng: np.random.Generator) -> float:
    env.reset(seed=seed)
    returns = {a: 0.0 for a in env.agents}
    while env.agents:
        _, rewards, _, _, _ = env.step({a: int(rng.integers(5)) for a in env.agents})
        for a, r in rewards.items():
            returns[a] += r
    return float(np.mean(list(returns.values())))


def pursuit_episode(env, seed: int, rng: np.random.Generator) -> float:
    # AEC loop: every agent turn re-publishes the reward vector, so the
    # cumulative reward seen at each turn is what the suite's trainers log.
    env.reset(seed=seed)
    returns = {a: 0.0 for a in env.possible_agents}
    for agent in env.agent_iter():
        _, rew, term, trunc, _ = env.last()
        returns[agent] += rew
        env.step(None if (term or trunc) else int(rng.integers(5)))
    return float(np.mean(list(returns.values())))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--env", choices=sorted(REFERENCE_KWARGS), required=True)
    ap.add_argument("--episodes", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    if args.env == "spread":
        from pettingzoo.mpe import simple_spread_v3

        env = simple_spread_v3.parallel_env(**REFERENCE_KWARGS["spread"])
        run = spread_episode
    else:
        from pettingzoo.sisl import pursuit_v4

        env = pursuit_v4.env(**REFERENCE_KWARGS["pursuit"])
        run = pursuit_episode

    rng = np.random.default_rng(args.seed)
    chash = reference_hash(args.env)
    t0 = time.time()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["env", "config_hash", "seed", "episode", "mean_agent_return"])
        for ep in range(args.episodes):
            ep_seed = args.seed * 1_000_003 + ep
            writer.writerow([args.env, chash, ep_seed, ep, repr(run(env, ep_seed, rng))])
            fh.flush()
    print(f"{args.env}: {args.episodes} episodes in {time.time() - t0:.1f}s -> {args.out}")


if __name__ == "__main__":
    main()
