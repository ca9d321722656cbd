"""Measurement protocol: random baselines, greedy evaluation, bootstrap CIs, sweeps."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from taskmarl.envs import PursuitConfig, SpreadConfig
from taskmarl.policy import AttentionPolicy
from taskmarl.rollout import episode_seed, run_policy, run_random
from taskmarl.trainer import Checkpoint, checkpoint_load, env_config_dict, fingerprint, task_dim

REPORT_COLUMNS = ("scenario", "param", "n_agents", "episodes", "mean", "ci_lo", "ci_hi",
                  "adjusted_mean", "seed", "config_hash")
_BASELINE, _POLICY = 11, 12


class EvaluationError(ValueError):
    pass


def bootstrap_ci(samples, level: float = 0.95, resamples: int = 10_000, seed: int = 0,
                 chunk: int = 1000) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean.

    The interval is widened to contain the sample mean when resampling noise
    would leave it just outside (possible only for tiny or degenerate samples).
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise EvaluationError(f"bootstrap needs at least 2 samples, got {x.size}")
    if not 0.0 < level < 1.0:
        raise EvaluationError(f"level must lie in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    for start in range(0, resamples, chunk):
        k = min(chunk, resamples - start)
        means[start:start + k] = x[rng.integers(0, x.size, (k, x.size))].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    m = x.mean()
    return float(min(lo, m)), float(max(hi, m))


def n_agents_of(env_config) -> int:
    return env_config.n_pursuers if isinstance(env_config, PursuitConfig) else env_config.n_agents


def env_name(env_config) -> str:
    return "pursuit" if isinstance(env_config, PursuitConfig) else "spread"


@dataclass
class EvalReport:
    env: str
    config_hash: str
    n_repetitions: int
    episodes_per_repetition: int
    mean_reward: float
    ci_lo: float
    ci_hi: float
    returns: np.ndarray = field(repr=False)
    n_agents: int = 0
    seed: int = 0

    @property
    def adjusted_mean(self) -> float:
        return self.mean_reward / self.n_agents

    def overlaps(self, other: "EvalReport") -> bool:
        """Statistically equivalent in the CI-overlap sense."""
        return self.ci_lo <= other.ci_hi and other.ci_lo <= self.ci_hi


def _report(env_config, returns, repetitions, episodes, seed, extra, resamples) -> EvalReport:
    returns = np.asarray(returns, dtype=np.float64)
    lo, hi = bootstrap_ci(returns, resamples=resamples, seed=seed)
    h = fingerprint({"env_config": env_config_dict(env_config), "seed": seed, **extra})
    return EvalReport(env_name(env_config), h, repetitions, episodes, float(returns.mean()), lo, hi,
                      returns, n_agents_of(env_config), seed)


def run_random_baseline(env_config, repetitions: int = 30, episodes: int = 50, seed: int = 0,
                        resamples: int = 10_000) -> EvalReport:
    """Uniform-random actions; returns ordered by (repetition, episode)."""
    out = []
    for rep in range(repetitions):
        rng = np.random.default_rng([seed, _BASELINE, rep])
        seeds = [episode_seed(seed, _BASELINE, rep, ep) for ep in range(episodes)]
        out.extend(run_random(env_config, seeds, rng).scores)
    return _report(env_config, out, repetitions, episodes, seed,
                   {"kind": "random", "repetitions": repetitions, "episodes": episodes}, resamples)


def evaluate_policy(checkpoint, env_config, episodes: int = 50, seed: int = 0,
                    resamples: int = 10_000, mode: str = "greedy") -> EvalReport:
    """Evaluate a checkpoint (path, :class:`Checkpoint` or policy).

    ``mode="sample"`` draws tasks from the policy distribution with a seeded
    generator instead of taking the argmax.
    """
    if mode not in ("greedy", "sample"):
        raise EvaluationError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    policy = load_policy(checkpoint, env_config)
    seeds = [episode_seed(seed, _POLICY, ep) for ep in range(episodes)]
    rng = np.random.default_rng([seed, _POLICY]) if mode == "sample" else None
    scores = run_policy(env_config, seeds, policy, mode, rng).scores
    extra = {"kind": "policy", "episodes": episodes, "mode": mode,
             "params": fingerprint({p: t.data.tobytes().hex() for p, t in policy.params.items()})}
    return _report(env_config, scores, 1, episodes, seed, extra, resamples)


def load_policy(checkpoint, env_config) -> AttentionPolicy:
    if isinstance(checkpoint, AttentionPolicy):
        if checkpoint.config.d_task != task_dim(env_config):
            raise EvaluationError(f"d_task mismatch: policy has {checkpoint.config.d_task}, "
                                  f"environment needs {task_dim(env_config)}")
        return checkpoint
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = checkpoint_load(checkpoint)
    return checkpoint.policy(task_dim(env_config))


@dataclass
class SweepEntry:
    param: int
    policy: EvalReport
    baseline: EvalReport

    @property
    def adjusted_mean(self) -> float:
        return self.policy.adjusted_mean


@dataclass
class SweepResult:
    scenario: str
    entries: list[SweepEntry]

    def params(self) -> list[int]:
        return [e.param for e in self.entries]


def scalability_sweep(checkpoint, ns=(6, 9, 12, 15), episodes: int = 50, seed: int = 0,
                      base_config: SpreadConfig | None = None, baseline_repetitions: int = 30,
                      baseline_episodes: int = 50, mode: str = "greedy") -> SweepResult:
    """Evaluate an unchanged Spread policy at several team sizes, with matched baselines."""
    base_config = base_config or SpreadConfig()
    policy = load_policy(checkpoint, base_config)
    entries = []
    for n in ns:
        cfg = replace(base_config, n_agents=int(n))
        entries.append(SweepEntry(int(n), evaluate_policy(policy, cfg, episodes, seed, mode=mode),
                                  run_random_baseline(cfg, baseline_repetitions, baseline_episodes, seed)))
    return SweepResult("scale", entries)


def fov_sweep(checkpoint, ranges=(5, 9), episodes: int = 50, seed: int = 0,
              base_config: PursuitConfig | None = None, baseline_repetitions: int = 30,
              baseline_episodes: int = 50, mode: str = "greedy") -> SweepResult:
    """Evaluate an unchanged Pursuit policy at several observation window sizes."""
    base_config = base_config or PursuitConfig()
    policy = load_policy(checkpoint, base_config)
    entries = []
    for r in ranges:
        cfg = replace(base_config, obs_range=int(r))
        entries.append(SweepEntry(int(r), evaluate_policy(policy, cfg, episodes, seed, mode=mode),
                                  run_random_baseline(cfg, baseline_repetitions, baseline_episodes, seed)))
    return SweepResult("fov", entries)


def improvement(trained: float, baseline: float) -> float:
    """Relative gain over a baseline, sign-aware so it works for negative rewards."""
    return (trained - baseline) / abs(baseline)


# ------------------------------------------------------------------ report files

def _row(scenario: str, param, report: EvalReport) -> dict:
    return {"scenario": scenario, "param": param, "n_agents": report.n_agents,
            "episodes": len(report.returns), "mean": repr(report.mean_reward), "ci_lo": repr(report.ci_lo),
            "ci_hi": repr(report.ci_hi), "adjusted_mean": repr(report.adjusted_mean),
            "seed": report.seed, "config_hash": report.config_hash}


def write_report(result, path, scenario: str | None = None, param="") -> list[Path]:
    """Write the report CSV plus a ``.returns`` sidecar (one per-episode score per line).

    A sweep writes one policy row and one ``-random`` row per swept value; the
    sidecar concatenates each row's returns in row order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(result, SweepResult):
        rows, chunks = [], []
        for e in result.entries:
            rows.append(_row(result.scenario, e.param, e.policy))
            rows.append(_row(result.scenario + "-random", e.param, e.baseline))
            chunks += [e.policy.returns, e.baseline.returns]
        returns = np.concatenate(chunks)
    else:
        rows = [_row(scenario or result.env, param, result)]
        returns = result.returns
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    sidecar = path.with_suffix(".returns")
    with open(sidecar, "w") as fh:
        fh.writelines(f"{x!r}\n" for x in map(float, returns))
    return [path, sidecar]


def read_report(path) -> tuple[list[dict], np.ndarray]:
    path = Path(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("mean", "ci_lo", "ci_hi", "adjusted_mean"):
            r[k] = float(r[k])
        for k in ("n_agents", "episodes", "seed"):
            r[k] = int(r[k])
    returns = np.loadtxt(path.with_suffix(".returns"), ndmin=1)
    return rows, returns


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)
