"""Attention-based task scoring policy.

Per-task MLP encoder -> two self-attention blocks (residual + layer norm, no
positional encoding) -> per-task score head.  A value head reads the masked
mean of the attended embeddings.  Nothing depends on the number of tasks, so
one set of weights serves any task-set size.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from taskmarl import numcore as nc
from taskmarl.numcore import ParamStore, Tensor
from taskmarl.tasks import TaskSet, convert, gen_tasks


class PolicyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    d_task: int = 7
    d_model: int = 64
    n_heads: int = 4
    encoder_hidden: tuple[int, ...] = (64, 64, 64)
    head_hidden: tuple[int, ...] = (32, 32)
    value_hidden: tuple[int, ...] = (32,)
    n_blocks: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise PolicyConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.encoder_hidden[-1] != self.d_model:
            raise PolicyConfigError("last encoder layer must have width d_model")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def init_params(config: PolicyConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()

    def dense(prefix: str, fan_in: int, fan_out: int):
        store.add(f"{prefix}.w", _glorot(rng, fan_in, fan_out))
        store.add(f"{prefix}.b", np.zeros(fan_out))

    widths = (config.d_task,) + tuple(config.encoder_hidden)
    for i in range(len(widths) - 1):
        dense(f"encoder.{i}", widths[i], widths[i + 1])
    d = config.d_model
    for b in range(config.n_blocks):
        for proj in ("q", "k", "v", "o"):
            dense(f"block{b}.{proj}", d, d)
        store.add(f"block{b}.ln.gain", np.ones(d))
        store.add(f"block{b}.ln.bias", np.zeros(d))
    widths = (d,) + tuple(config.head_hidden) + (1,)
    for i in range(len(widths) - 1):
        dense(f"head.{i}", widths[i], widths[i + 1])
    widths = (d,) + tuple(config.value_hidden) + (1,)
    for i in range(len(widths) - 1):
        dense(f"value.{i}", widths[i], widths[i + 1])
    return store


def _mlp(x: Tensor, params: ParamStore, prefix: str, n_layers: int, final_relu: bool) -> Tensor:
    for i in range(n_layers):
        x = nc.linear(x, params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"])
        if final_relu or i < n_layers - 1:
            x = nc.relu(x)
    return x


def encode_tasks(x, params: ParamStore, config: PolicyConfig) -> Tensor:
    """Shared per-task MLP, ``[..., T, d_task] -> [..., T, d_model]``."""
    x = nc.as_tensor(x)
    if x.shape[-1] != config.d_task:
        raise PolicyConfigError(f"task vectors have {x.shape[-1]} features, policy expects {config.d_task}")
    return _mlp(x, params, "encoder", len(config.encoder_hidden), final_relu=True)


def mha_block(x: Tensor, params: ParamStore, config: PolicyConfig, block: int,
              mask: np.ndarray | None = None) -> Tensor:
    """``layer_norm(x + MHA(x))`` over ``[B, T, d_model]``; ``mask`` marks real tasks."""
    squeeze = x.data.ndim == 2
    if squeeze:
        x = nc.reshape(x, (1,) + x.shape)
    B, T, D = x.shape
    H = config.n_heads
    dh = D // H
    p = f"block{block}"

    def heads(name):
        y = nc.linear(x, params[f"{p}.{name}.w"], params[f"{p}.{name}.b"])
        return nc.transpose(nc.reshape(y, (B, T, H, dh)), (0, 2, 1, 3))  # [B, H, T, dh]

    q, k, v = heads("q"), heads("k"), heads("v")
    logits = nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    key_mask = None if mask is None else mask[:, None, None, :]
    attn = nc.softmax_rows(logits, key_mask)
    mixed = nc.reshape(nc.transpose(nc.matmul(attn, v), (0, 2, 1, 3)), (B, T, D))
    out = nc.linear(mixed, params[f"{p}.o.w"], params[f"{p}.o.b"])
    y = nc.layer_norm(x + out, params[f"{p}.ln.gain"], params[f"{p}.ln.bias"])
    return nc.reshape(y, (T, D)) if squeeze else y


def forward(params: ParamStore, config: PolicyConfig, x: np.ndarray,
            mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scores ``[B, T]`` and values ``[B]`` for a padded batch ``x: [B, T, d_task]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    B, T, _ = x.shape
    if T == 0:
        raise PolicyConfigError("cannot score an empty task set")
    h = encode_tasks(x, params, config)
    for b in range(config.n_blocks):
        h = mha_block(h, params, config, b, mask)
    scores = nc.reshape(_mlp(h, params, "head", len(config.head_hidden) + 1, final_relu=False), (B, T))
    pooled = nc.masked_mean(h, mask)
    value = nc.reshape(_mlp(pooled, params, "value", len(config.value_hidden) + 1, final_relu=False), (B,))
    return scores, value


def pad_tasksets(tasksets: list[TaskSet], d_task: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    d = d_task or tasksets[0].dim
    T = max(len(ts) for ts in tasksets)
    x = np.zeros((len(tasksets), T, d))
    mask = np.zeros((len(tasksets), T), dtype=bool)
    for i, ts in enumerate(tasksets):
        if ts.dim != d:
            raise PolicyConfigError(f"task set {i} has {ts.dim} features, expected {d}")
        x[i, : len(ts)] = ts.features
        mask[i, : len(ts)] = True
    return x, mask


@dataclass
class PolicyOutput:
    scores: np.ndarray
    probs: np.ndarray
    value: float
    chosen: int = -1
    log_prob: float = float("nan")


def _probs(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def score_tasks(tasks: TaskSet, params: ParamStore, config: PolicyConfig) -> PolicyOutput:
    if len(tasks) == 0:
        raise PolicyConfigError("cannot score an empty task set")
    scores, value = forward(params, config, tasks.features)
    s = scores.data[0]
    return PolicyOutput(scores=s, probs=_probs(s), value=float(value.data[0]))


def select_task(output: PolicyOutput, mode: str, rng: np.random.Generator | None = None) -> PolicyOutput:
    """Fill ``chosen``/``log_prob``: categorical draw (``sample``) or first argmax (``greedy``)."""
    p = output.probs
    if mode == "greedy":
        idx = int(np.argmax(output.scores))
    elif mode == "sample":
        u = rng.random()
        idx = int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))
        while p[idx] == 0.0:  # never land on a zero-probability task
            idx -= 1
    else:
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    z = output.scores - output.scores.max()
    output.chosen = idx
    output.log_prob = float(z[idx] - np.log(np.exp(z).sum()))
    return output


@dataclass
class ActResult:
    action: int
    task_index: int
    tasks: TaskSet
    log_prob: float
    value: float
    probs: np.ndarray = field(repr=False, default=None)

    @property
    def task(self):
        return self.tasks[self.task_index]


class AttentionPolicy:
    """Weights plus architecture; forward passes never mutate the weights."""

    def __init__(self, config: PolicyConfig, params: ParamStore | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def forward(self, x, mask=None):
        return forward(self.params, self.config, x, mask)

    def score(self, tasks: TaskSet) -> PolicyOutput:
        return score_tasks(tasks, self.params, self.config)

    def act(self, obs, mode: str = "greedy", rng: np.random.Generator | None = None) -> ActResult:
        return self.act_batch([obs], mode, rng)[0]

    def act_batch(self, observations: list, mode: str = "greedy",
                  rng: np.random.Generator | None = None) -> list[ActResult]:
        """Generate, score, select and convert for many agents in one forward pass."""
        tasksets = [gen_tasks(o) for o in observations]
        x, mask = pad_tasksets(tasksets, self.config.d_task)
        scores, values = self.forward(x, mask)
        results = []
        for i, (ts, obs) in enumerate(zip(tasksets, observations)):
            s = scores.data[i, : len(ts)]
            out = select_task(PolicyOutput(s, _probs(s), float(values.data[i])), mode, rng)
            results.append(ActResult(convert(ts[out.chosen], obs), out.chosen, ts,
                                     out.log_prob, out.value, out.probs))
        return results
