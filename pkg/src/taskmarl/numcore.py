"""Dense float64 tensors with tape-based reverse-mode gradients, plus Adam.

Every op builds a node that remembers its parents and a closure mapping the
output gradient to parent gradients.  ``backward`` walks the graph in reverse
topological order.  Leaves created with ``requires_grad=True`` (parameters)
accumulate into ``.grad`` across calls; intermediate gradients are local to a
single ``backward`` call.

Ops broadcast over leading batch axes, so a padded batch ``[B, T, d]`` of task
sets flows through the same code path as a single ``[T, d]`` set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

LN_EPS = 1e-5
MASK_FILL = -1e30


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}{', grad' if self.requires_grad else ''})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    # ties route the gradient to ``a``
    take_a = a.data <= b.data
    return _node(
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)),
    )


def where(cond: np.ndarray, a: Tensor, fill: float) -> Tensor:
    """Select ``a`` where ``cond`` holds, a constant elsewhere."""
    cond = np.asarray(cond, dtype=bool)
    return _node(np.where(cond, a.data, fill), (a,), lambda g: (_unbroadcast(g * cond, a.shape),))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]``."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.data.ndim == 2:
            # shared weight: fold the batch axes into one GEMM instead of summing [B, k, n]
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _node(a.data @ b.data, (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def index(a: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), back)


def take_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """``a[..., idx]`` picking one entry per leading row: ``[B, T] -> [B]``."""
    idx = np.asarray(idx)
    rows = np.arange(a.shape[0])
    return index(a, (rows, idx))


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def masked_mean(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis -2 of ``[B, T, d]`` counting only rows where ``mask`` is set."""
    w = mask.astype(np.float64)
    w = w / w.sum(axis=-1, keepdims=True)
    return sum_(mul(a, w[..., None]), axis=-2)


# ---------------------------------------------------------------- composites

def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, max-shifted; masked entries get probability 0."""
    z = x.data if mask is None else np.where(mask, x.data, MASK_FILL)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = e * mask
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (x,), back)


def log_softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    z = x.data if mask is None else np.where(mask, x.data, MASK_FILL)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = e * mask
    s = e.sum(axis=-1, keepdims=True)
    out = z - np.log(s)
    p = e / s
    if mask is not None:
        out = np.where(mask, out, 0.0)

    def back(g):
        if mask is not None:
            g = g * mask
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs at least 2 features, got {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _node(xhat * gain.data + bias.data, (x, gain, bias), back)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


# ---------------------------------------------------------------- backward

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` leaf's ``.grad``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not (parent.requires_grad or parent._parents):
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ---------------------------------------------------------------- parameters

class ParamStore:
    """Ordered mapping of parameter path -> leaf tensor (value + grad)."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, path: str, value: np.ndarray) -> Tensor:
        if path in self._entries:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=path)
        self._entries[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._entries[path]

    def __contains__(self, path: str) -> bool:
        return path in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._entries.items()

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad[...] = 0.0

    def n_values(self) -> int:
        return sum(t.data.size for t in self._entries.values())

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((t.grad**2).sum()) for t in self._entries.values())))

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.grad_norm()
        if norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for t in self._entries.values():
                t.grad *= scale
        return norm

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for path, t in self._entries.items():
            out.add(path, t.data.copy())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self._entries.items()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._entries) - set(values)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for path, t in self._entries.items():
            v = np.asarray(values[path], dtype=np.float64)
            if v.shape != t.shape:
                raise ShapeError(f"{path}: expected shape {t.shape}, got {v.shape}")
            t.data[...] = v


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update from the accumulated grads; grads are zeroed."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for path, t in store.items():
        m = state.m.setdefault(path, np.zeros_like(t.data))
        v = state.v.setdefault(path, np.zeros_like(t.data))
        g = t.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        g[...] = 0.0


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    tolerance: float

    @property
    def failures(self) -> list[str]:
        return [p for p, e in self.per_param.items() if e > self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failures


def grad_check(
    forward: Callable[[], Tensor],
    params: ParamStore,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    atol: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic grads of ``forward()`` against central differences.

    The error for a parameter tensor is ``|a - n| / max(|a| + |n|, 1e-12)``
    with Euclidean norms over all its entries.  Tensors whose analytic and
    numeric gradients both have norm below ``atol`` count as exact: some
    gradients are identically zero (e.g. attention key biases, which shift
    every logit of a row equally) and their numeric estimate is pure rounding.
    """
    params.zero_grad()
    backward(forward())
    analytic = {p: t.grad.copy() for p, t in params.items()}
    params.zero_grad()

    per_param = {}
    for path, t in params.items():
        flat = t.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = forward().item()
            flat[i] = orig - h
            down = forward().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * h)
        a = analytic[path].reshape(-1)
        if np.linalg.norm(a) < atol and np.linalg.norm(numeric) < atol:
            per_param[path] = 0.0
            continue
        denom = max(np.linalg.norm(a) + np.linalg.norm(numeric), 1e-12)
        per_param[path] = float(np.linalg.norm(a - numeric) / denom)
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(worst, per_param, tolerance)
