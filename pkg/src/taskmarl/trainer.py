"""Clipped-surrogate policy optimisation with GAE and one policy shared by all agents."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from taskmarl import numcore as nc
from taskmarl.envs import PursuitConfig, SpreadConfig
from taskmarl.numcore import AdamState, ParamStore
from taskmarl.policy import AttentionPolicy, PolicyConfig, forward
from taskmarl.rollout import Trajectories, episode_seed, run_policy
from taskmarl.tasks import PURSUIT_TASK_DIM, SPREAD_TASK_DIM

CHECKPOINT_MAGIC = "TASKRL-CKPT v1"
LOG_COLUMNS = ("iteration", "env_steps", "mean_reward", "ci_lo", "ci_hi", "policy_loss",
               "value_loss", "entropy", "clip_frac", "wall_s")

# seed-stream tags so rollout, shuffling and evaluation never share draws
_ROLLOUT, _SAMPLING, _SHUFFLE, _EVAL = 1, 2, 3, 4


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs_per_iter: int = 4
    minibatch_size: int = 256
    steps_per_iteration: int = 12800
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    max_iterations: int = 150
    eval_every: int = 1
    eval_episodes: int = 50
    normalize_returns: bool = True
    anneal_lr: bool = True  # linear decay to zero over max_iterations
    eval_mode: str = "greedy"

    def __post_init__(self):
        if self.eval_mode not in ("greedy", "sample"):
            raise ValueError(f"eval_mode must be 'greedy' or 'sample', got {self.eval_mode!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.clip_eps <= 0:
            raise ValueError(f"clip_eps must be positive, got {self.clip_eps}")
        for name in ("epochs_per_iter", "minibatch_size", "steps_per_iteration",
                     "max_iterations", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def task_dim(env_config) -> int:
    return PURSUIT_TASK_DIM if isinstance(env_config, PursuitConfig) else SPREAD_TASK_DIM


# ------------------------------------------------------------------ rollouts

@dataclass
class RolloutBatch:
    """Complete-episode transitions plus per-episode scores.

    ``advantages``/``returns`` are filled in by :func:`compute_gae`.
    """

    features: np.ndarray  # [N, T_max, d] zero-padded
    mask: np.ndarray  # [N, T_max]
    chosen: np.ndarray
    log_prob: np.ndarray
    value: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    agent: np.ndarray
    step: np.ndarray
    stream: np.ndarray
    episode_scores: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    value_targets: np.ndarray | None = None  # what the value head regresses on

    def __len__(self) -> int:
        return len(self.chosen)

    @classmethod
    def from_trajectories(cls, traj: Trajectories, scores: np.ndarray, d_task: int) -> "RolloutBatch":
        n = len(traj)
        t_max = max(len(f) for f in traj.features)
        feats = np.zeros((n, t_max, d_task))
        mask = np.zeros((n, t_max), dtype=bool)
        for i, f in enumerate(traj.features):
            feats[i, : len(f)] = f
            mask[i, : len(f)] = True
        return cls(feats, mask, np.array(traj.chosen), np.array(traj.log_prob), np.array(traj.value),
                   np.array(traj.reward), np.array(traj.done, dtype=bool), np.array(traj.agent),
                   np.array(traj.step), np.array(traj.stream), np.asarray(scores, dtype=np.float64))


def _episode_length(env_config) -> int:
    if isinstance(env_config, SpreadConfig):
        return env_config.max_steps * env_config.n_agents
    return env_config.max_cycles * env_config.n_pursuers


def collect_rollouts(env_config, policy: AttentionPolicy, n_steps: int, seed: int,
                     iteration: int = 0) -> RolloutBatch:
    """Sample-mode episodes until at least ``n_steps`` agent-transitions exist.

    Episodes run in waves sized so a wave of full-length episodes covers the
    remaining steps; early terminations trigger another wave.
    """
    rng = np.random.default_rng([seed, _SAMPLING, iteration])
    full = _episode_length(env_config)
    parts, scores, collected, episode = [], [], 0, 0
    while collected < n_steps:
        wave = max(1, math.ceil((n_steps - collected) / full))
        seeds = [episode_seed(seed, _ROLLOUT, iteration, episode + k) for k in range(wave)]
        out = run_policy(env_config, seeds, policy, "sample", rng, record=True)
        parts.append(out.trajectories)
        scores.extend(out.scores)
        collected += len(out.trajectories)
        episode += wave
    merged = parts[0]
    offset = max(merged.stream) + 1
    for p in parts[1:]:
        for name in ("features", "chosen", "log_prob", "value", "reward", "done", "agent", "step"):
            getattr(merged, name).extend(getattr(p, name))
        merged.stream.extend(s + offset for s in p.stream)
        offset += max(p.stream) + 1
    return RolloutBatch.from_trajectories(merged, np.array(scores), policy.config.d_task)


def compute_gae(batch: RolloutBatch, gamma: float, lam: float, normalize: bool = True) -> RolloutBatch:
    """Per-stream GAE; no bootstrapping past a done flag or a stream's end."""
    r, v, done = batch.reward, batch.value, batch.done
    n = len(r)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        boundary = done[t] or t == n - 1 or batch.stream[t + 1] != batch.stream[t]
        next_v = 0.0 if boundary else v[t + 1]
        carry = 0.0 if boundary else last
        delta = r[t] + gamma * next_v - v[t]
        last = delta + gamma * lam * carry
        adv[t] = last
    batch.returns = adv + v
    if normalize and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    batch.advantages = adv
    return batch


@dataclass
class ReturnNormalizer:
    """Running mean/variance of value targets.

    The value head predicts standardised returns; without this the value
    gradient dwarfs the policy gradient under global norm clipping.
    """

    mean: float = 0.0
    var: float = 1.0
    count: float = 0.0

    @property
    def std(self) -> float:
        return max(math.sqrt(self.var), 1e-4)

    def update(self, x: np.ndarray) -> None:
        n = float(len(x))
        if n == 0:
            return
        m, v = float(np.mean(x)), float(np.var(x))
        total = self.count + n
        delta = m - self.mean
        self.var = (self.var * self.count + v * n + delta**2 * self.count * n / total) / total
        self.mean += delta * n / total
        self.count = total

    def normalize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x) * self.std + self.mean


# ------------------------------------------------------------------ update

@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_frac: float
    grad_norm: float = 0.0


def ppo_loss(params: ParamStore, pcfg: PolicyConfig, tcfg: TrainConfig, features, mask, chosen,
             old_log_prob, advantages, returns):
    """Total loss tensor plus (policy, value, entropy, clip fraction) diagnostics."""
    t_used = int(mask.sum(axis=1).max())
    features, mask = features[:, :t_used], mask[:, :t_used]
    scores, value = forward(params, pcfg, features, mask)
    logp_all = nc.log_softmax(scores, mask)
    logp = nc.take_last(logp_all, chosen)
    ratio = nc.exp(logp - old_log_prob)
    surr1 = ratio * advantages
    surr2 = nc.clip(ratio, 1.0 - tcfg.clip_eps, 1.0 + tcfg.clip_eps) * advantages
    policy_loss = -nc.mean(nc.minimum(surr1, surr2))
    value_loss = nc.mean(nc.square(value - returns))
    entropy = _entropy(logp_all, mask)
    total = policy_loss + tcfg.value_coef * value_loss - tcfg.entropy_coef * entropy
    clip_frac = float(np.mean(np.abs(ratio.data - 1.0) > tcfg.clip_eps))
    return total, (policy_loss.item(), value_loss.item(), entropy.item(), clip_frac)


def _entropy(logp_all, mask):
    """Mean categorical entropy ``-sum p log p`` over real tasks."""
    logp = nc.where(mask, logp_all, 0.0)
    p = nc.where(mask, nc.exp(logp), 0.0)
    return -nc.mean(nc.sum_(p * logp, axis=-1))


def ppo_update(batch: RolloutBatch, policy: AttentionPolicy, adam: AdamState, config: TrainConfig,
               rng: np.random.Generator) -> UpdateStats:
    if batch.advantages is None:
        raise TrainingError("compute_gae must run before ppo_update")
    params = policy.params
    n = len(batch)
    targets = batch.returns if batch.value_targets is None else batch.value_targets
    stats = []
    for epoch in range(config.epochs_per_iter):
        order = rng.permutation(n)
        for mb, start in enumerate(range(0, n, config.minibatch_size)):
            idx = order[start:start + config.minibatch_size]
            total, diag = ppo_loss(params, policy.config, config, batch.features[idx], batch.mask[idx],
                                   batch.chosen[idx], batch.log_prob[idx], batch.advantages[idx],
                                   targets[idx])
            if not np.isfinite(total.item()):
                raise TrainingError(f"non-finite loss {total.item()} in epoch {epoch} minibatch {mb}")
            params.zero_grad()
            nc.backward(total)
            gnorm = params.clip_grad_norm(config.max_grad_norm)
            nc.adam_step(params, adam)
            stats.append(diag + (gnorm,))
    s = np.mean(np.array(stats), axis=0)
    return UpdateStats(*map(float, s))


# ------------------------------------------------------------------ checkpoints

def checkpoint_save(params: ParamStore, adam: AdamState | None, metadata: dict, path) -> Path:
    """Write the portable text checkpoint; floats use round-trip repr."""

    def tensors(values: dict[str, np.ndarray]) -> dict:
        return {p: {"shape": list(v.shape), "values": [float(x) for x in np.ravel(v)]}
                for p, v in values.items()}

    doc = {"params": tensors(params.state()), "metadata": metadata, "optimizer": None}
    if adam is not None:
        doc["optimizer"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                            "epsilon": adam.epsilon, "step": adam.step,
                            "m": tensors(adam.m), "v": tensors(adam.v)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")
    tmp.replace(path)
    return path


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam: AdamState | None
    metadata: dict = field(default_factory=dict)

    @property
    def d_task(self) -> int:
        return int(self.metadata["policy"]["d_task"])

    def policy(self, expected_d_task: int | None = None) -> AttentionPolicy:
        pcfg = PolicyConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in self.metadata["policy"].items()})
        if expected_d_task is not None and pcfg.d_task != expected_d_task:
            raise CheckpointError(f"d_task mismatch: checkpoint has {pcfg.d_task}, environment needs {expected_d_task}")
        pol = AttentionPolicy(pcfg)
        pol.params.load_state(self.params)
        return pol


def _read_tensors(doc: dict, where: str) -> dict[str, np.ndarray]:
    out = {}
    for p, entry in doc.items():
        try:
            shape = tuple(entry["shape"])
            values = np.array(entry["values"], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{where}.{p}: malformed tensor entry ({exc})") from None
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{where}.{p}.values: {values.size} values for shape {list(shape)}")
        out[p] = values.reshape(shape)
    return out


def checkpoint_load(path) -> Checkpoint:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        body = fh.read()
    if header != CHECKPOINT_MAGIC:
        raise CheckpointError(f"header: expected {CHECKPOINT_MAGIC!r}, found {header[:40]!r}")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"body: unreadable document ({exc.msg} at char {exc.pos})") from None
    for key in ("params", "metadata"):
        if key not in doc:
            raise CheckpointError(f"{key}: missing")
    if "policy" not in doc["metadata"]:
        raise CheckpointError("metadata.policy: missing")
    params = _read_tensors(doc["params"], "params")
    adam = None
    opt = doc.get("optimizer")
    if opt is not None:
        try:
            adam = AdamState(lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], epsilon=opt["epsilon"],
                             step=int(opt["step"]), m=_read_tensors(opt["m"], "optimizer.m"),
                             v=_read_tensors(opt["v"], "optimizer.v"))
        except KeyError as exc:
            raise CheckpointError(f"optimizer.{exc.args[0]}: missing") from None
    return Checkpoint(params, adam, doc["metadata"])


# ------------------------------------------------------------------ loop

def env_config_dict(env_config) -> dict:
    kind = "pursuit" if isinstance(env_config, PursuitConfig) else "spread"
    return {"env": kind, **asdict(env_config)}


def env_config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("env")
    return PursuitConfig(**d) if kind == "pursuit" else SpreadConfig(**d)


def fingerprint(obj) -> str:
    import hashlib
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_hash(env_config, train_config: TrainConfig, seed: int) -> str:
    """Identity of a training run; stored in every checkpoint it writes."""
    return fingerprint({"env_config": env_config_dict(env_config), "train_config": asdict(train_config),
                        "seed": seed})


def evaluation_seeds(seed: int, episodes: int) -> list[int]:
    """Fixed greedy-evaluation episodes, identical at every iteration."""
    return [episode_seed(seed, _EVAL, k) for k in range(episodes)]


@dataclass
class TrainResult:
    log_path: Path
    rows: list[dict]
    checkpoints: list[Path]
    best_checkpoint: Path | None
    policy: AttentionPolicy


def _fmt(x) -> str:
    if x is None:
        return ""
    return str(x) if isinstance(x, (int, np.integer)) else repr(float(x))


def train(env_config, train_config: TrainConfig, seed: int, out_dir, resume_from=None,
          checkpoint_every: int | None = None, progress=None) -> TrainResult:
    """Collect -> GAE -> update -> greedy eval -> checkpoint, one log row per iteration.

    Evaluation and checkpointing run every ``eval_every`` iterations and on the
    last one; rows without an evaluation leave the reward columns empty.
    Resuming from the checkpoint of iteration k reproduces the rows k+1... of
    an uninterrupted run, apart from ``wall_s``.
    """
    from taskmarl.evaluation import bootstrap_ci  # evaluation imports the trainer

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d_task = task_dim(env_config)
    pcfg = PolicyConfig(d_task=d_task)
    meta_base = {"env_config": env_config_dict(env_config), "train_config": asdict(train_config),
                 "seed": seed, "policy": asdict(pcfg)}
    meta_base["config_hash"] = run_hash(env_config, train_config, seed)

    start, rows, best = 1, [], -np.inf
    if resume_from is not None:
        ck = checkpoint_load(resume_from)
        policy = ck.policy(d_task)
        adam = ck.adam or AdamState(lr=train_config.lr)
        norm = ReturnNormalizer(**ck.metadata.get("return_norm", {}))
        start = int(ck.metadata["iteration"]) + 1
        best = float(ck.metadata.get("best_mean", -np.inf))
        log_path = out_dir / "train_log.csv"
        if log_path.exists():
            with open(log_path) as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["iteration"]) < start]
    else:
        policy = AttentionPolicy(pcfg, seed=seed)
        adam = AdamState(lr=train_config.lr)
        norm = ReturnNormalizer()

    log_path = out_dir / "train_log.csv"
    checkpoints: list[Path] = []
    best_path = out_dir / "best.ckpt" if (out_dir / "best.ckpt").exists() and resume_from else None
    every = checkpoint_every or train_config.eval_every
    eval_seeds = evaluation_seeds(seed, train_config.eval_episodes)
    env_steps = int(rows[-1]["env_steps"]) if rows else 0

    for it in range(start, train_config.max_iterations + 1):
        t0 = time.perf_counter()
        batch = collect_rollouts(env_config, policy, train_config.steps_per_iteration, seed, it)
        if train_config.normalize_returns:
            batch.value = norm.denormalize(batch.value)
        compute_gae(batch, train_config.gamma, train_config.gae_lambda)
        if train_config.normalize_returns:
            norm.update(batch.returns)
            batch.value_targets = norm.normalize(batch.returns)
        if train_config.anneal_lr:
            adam.lr = train_config.lr * (1.0 - (it - 1) / train_config.max_iterations)
        stats = ppo_update(batch, policy, adam, train_config, np.random.default_rng([seed, _SHUFFLE, it]))
        env_steps += len(batch)
        last = it == train_config.max_iterations
        mean = lo = hi = None
        if it % train_config.eval_every == 0 or last:
            eval_rng = np.random.default_rng([seed, _EVAL, it]) if train_config.eval_mode == "sample" else None
            ev = run_policy(env_config, eval_seeds, policy, train_config.eval_mode, eval_rng)
            mean = float(ev.scores.mean())
            lo, hi = bootstrap_ci(ev.scores, seed=seed)
        row = {"iteration": it, "env_steps": env_steps, "mean_reward": mean, "ci_lo": lo, "ci_hi": hi,
               "policy_loss": stats.policy_loss, "value_loss": stats.value_loss, "entropy": stats.entropy,
               "clip_frac": stats.clip_frac, "wall_s": time.perf_counter() - t0}
        rows.append({k: _fmt(v) for k, v in row.items()})
        if mean is not None and mean > best:
            best = mean
            meta = dict(meta_base, iteration=it, best_mean=best, eval_mean=mean,
                        return_norm=asdict(norm))
            best_path = checkpoint_save(policy.params, adam, meta, out_dir / "best.ckpt")
        if it % every == 0 or last:
            meta = dict(meta_base, iteration=it, best_mean=best, eval_mean=mean,
                        return_norm=asdict(norm))
            checkpoints.append(checkpoint_save(policy.params, adam, meta, out_dir / f"iter_{it:04d}.ckpt"))
        _write_log(log_path, rows)
        if progress is not None:
            progress(row)
    return TrainResult(log_path, rows, checkpoints, best_path, policy)


def _write_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
