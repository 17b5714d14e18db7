"""Minimal reverse-mode autodiff over numpy arrays.

Tensors are float64 by default so finite-difference tolerances are
reachable.  A tensor produced by a primitive remembers its parents and a
backward closure; ``backward`` walks the graph in reverse topological
order and accumulates gradients into ``requires_grad`` leaves.  Repeated
backward calls accumulate; callers reset grads between steps.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

MASK_OFF = -np.inf

_grad_enabled = True


class NonFiniteError(ValueError):
    """Raised when a primitive receives or would produce NaN/Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar over the primitive set
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a single reduction instead of an elementwise isfinite scan: any nan
    # poisons the sum and any inf drives it to +/-inf or nan, so checking
    # the sum is equivalent and much cheaper on small arrays
    if not math.isfinite(float(np.sum(arr))):
        raise NonFiniteError(f"{op}: non-finite input")


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = bwd
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_finite(a.data, "add")
    _check_finite(b.data, "add")
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_finite(a.data, "sub")
    _check_finite(b.data, "sub")
    try:
        data = a.data - b.data
    except ValueError:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_finite(a.data, "mul")
    _check_finite(b.data, "mul")
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    _check_finite(a.data, "scale")
    if not np.isfinite(s):
        raise NonFiniteError("scale: non-finite scalar")

    def bwd(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_finite(a.data, "matmul")
    _check_finite(b.data, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), bwd)


def exp(a: Tensor) -> Tensor:
    _check_finite(a.data, "exp")
    data = np.exp(a.data)
    _check_finite(data, "exp (overflow)")

    def bwd(g):
        _accum(a, g * data)

    return _make(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    _check_finite(a.data, "log")
    if np.any(a.data <= 0):
        raise NonFiniteError("log: non-positive input")
    data = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    _check_finite(a.data, "tanh")
    data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - data * data))

    return _make(data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    _check_finite(a.data, "relu")
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected 2-D tensor, got shape {a.shape}")

    def bwd(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input list")
    for t in tensors:
        _check_finite(t.data, "concat")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(data, tuple(tensors), bwd)


def slice_cols(a: Tensor, start: int, end: int) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"slice_cols: expected 2-D tensor, got shape {a.shape}")
    if not (0 <= start < end <= a.shape[1]):
        raise ValueError(f"slice_cols: bad range [{start}:{end}] for shape {a.shape}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:end] = g
        _accum(a, full)

    return _make(a.data[:, start:end].copy(), (a,), bwd)


def mean(a: Tensor, axis: int) -> Tensor:
    _check_finite(a.data, "mean")
    if a.data.shape[axis] == 0:
        raise ValueError("mean: empty axis")
    n = a.data.shape[axis]
    data = a.data.mean(axis=axis)

    def bwd(g):
        _accum(a, np.expand_dims(g, axis).repeat(n, axis=axis) / n)

    return _make(data, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    _check_finite(a.data, "sum_all")

    def bwd(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    _check_finite(a.data, "mean_all")
    n = a.data.size
    if n == 0:
        raise ValueError("mean_all: empty tensor")

    def bwd(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _make(np.asarray(a.data.mean()), (a,), bwd)


def stack_scalars(tensors: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a 1-D vector."""
    if not tensors:
        raise ValueError("stack_scalars: empty input list")
    for t in tensors:
        if t.data.ndim != 0:
            raise ValueError(f"stack_scalars: expected scalars, got shape {t.shape}")
    data = np.array([float(t.data) for t in tensors])
    _check_finite(data, "stack_scalars")

    def bwd(g):
        for i, t in enumerate(tensors):
            _accum(t, np.asarray(g[i]))

    return _make(data, tuple(tensors), bwd)


def as_row(v: Tensor) -> Tensor:
    """View a 1-D tensor as a (1, n) matrix."""
    if v.data.ndim != 1:
        raise ValueError(f"as_row: expected 1-D tensor, got shape {v.shape}")

    def bwd(g):
        _accum(v, g[0])

    return _make(v.data[None, :].copy(), (v,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer id."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"embedding: ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"embedding: id out of range for table with {table.shape[0]} rows"
        )
    _check_finite(table.data, "embedding")

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)

    return _make(table.data[ids].copy(), (table,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Row-wise layer normalization with learnable gain and bias."""
    _check_finite(x.data, "layer_norm")
    if x.data.ndim != 2:
        raise ValueError(f"layer_norm: expected 2-D input, got shape {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        dg = (g * xhat).sum(axis=0)
        db = g.sum(axis=0)
        gx = g * gain.data
        dx = inv * (
            gx
            - gx.mean(axis=1, keepdims=True)
            - xhat * (gx * xhat).mean(axis=1, keepdims=True)
        )
        _accum(gain, dg)
        _accum(bias, db)
        _accum(x, dx)

    return _make(data, (x, gain, bias), bwd)


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax over visible entries; masked entries are exactly 0.

    ``mask`` is boolean with the same shape as ``logits``; True = visible.
    Masked logits never enter the computation, so perturbing them leaves
    the output bit-identical.
    """
    _check_finite(logits.data, "masked_softmax")
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ValueError(
            f"masked_softmax: mask shape {mask.shape} does not match logits {logits.shape}"
        )
    squeeze = logits.data.ndim == 1
    x = logits.data[None, :] if squeeze else logits.data
    m = mask[None, :] if squeeze else mask
    dead = ~m.any(axis=1)
    if dead.any():
        raise ValueError(f"masked_softmax: fully masked row {int(np.argmax(dead))}")
    shifted = np.where(m, x, MASK_OFF)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(m, np.exp(np.where(m, shifted, 0.0)), 0.0)
    p = e / e.sum(axis=1, keepdims=True)
    data = p[0] if squeeze else p

    def bwd(g):
        gp = g[None, :] if squeeze else g
        dx = p * (gp - (gp * p).sum(axis=1, keepdims=True))
        dx = np.where(m, dx, 0.0)
        _accum(logits, dx[0] if squeeze else dx)

    return _make(data, (logits,), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-softmax of integer targets; optional ignore id."""
    _check_finite(logits.data, "cross_entropy")
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ValueError(
            f"cross_entropy: logits {logits.shape} vs targets {targets.shape}"
        )
    valid = np.ones(targets.shape[0], dtype=bool)
    if ignore_index is not None:
        valid = targets != ignore_index
    if not valid.any():
        raise ValueError("cross_entropy: no valid target positions")
    safe_targets = np.where(valid, targets, 0)
    if safe_targets.min() < 0 or safe_targets.max() >= logits.shape[1]:
        raise ValueError(
            f"cross_entropy: target id out of range for {logits.shape[1]} classes"
        )
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    nll = lse - x[np.arange(x.shape[0]), safe_targets]
    n_valid = int(valid.sum())
    data = np.asarray(nll[valid].mean())

    def bwd(g):
        p = np.exp(x - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(x.shape[0]), safe_targets] -= 1.0
        p[~valid] = 0.0
        _accum(logits, p * (float(g) / n_valid))

    return _make(data, (logits,), bwd)


def primitive_set() -> dict:
    """Catalog of the differentiable primitives this substrate provides."""
    return {
        "add": add,
        "sub": sub,
        "mul": mul,
        "scale": scale,
        "matmul": matmul,
        "exp": exp,
        "log": log,
        "tanh": tanh,
        "relu": relu,
        "transpose": transpose,
        "concat": concat,
        "slice_cols": slice_cols,
        "mean": mean,
        "sum_all": sum_all,
        "mean_all": mean_all,
        "stack_scalars": stack_scalars,
        "embedding": embedding,
        "layer_norm": layer_norm,
        "masked_softmax": masked_softmax,
        "cross_entropy": cross_entropy,
    }


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable ``requires_grad`` leaf."""
    if loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    # iterative topological sort; generation loops can build deep graphs
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.asarray(1.0)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            _check_finite(node.grad, "backward")


# ---------------------------------------------------------------------------
# finite-difference checking


def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords_per_param: int = 10,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates are sampled reproducibly per parameter.  ``f`` must be
    deterministic: two baseline evaluations must agree bitwise.
    """
    if eps <= 0:
        raise ValueError("finite_diff_check: eps must be positive")
    base1 = float(f(params).data)
    base2 = float(f(params).data)
    if base1 != base2:
        raise ValueError("finite_diff_check: f is not deterministic")

    for p in params:
        p.zero_grad()
    loss = f(params)
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        n = p.data.size
        idxs = np.arange(n) if n <= max_coords_per_param else rng.choice(n, size=max_coords_per_param, replace=False)
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(params).data)
            flat[i] = orig - eps
            lo = float(f(params).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / (abs(aflat[i]) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
