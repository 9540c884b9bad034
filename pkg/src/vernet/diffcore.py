"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a :class:`Tensor` that has a differentiable ancestor
records itself (inputs, output, and a local backward rule).  Calling
:func:`backward` on a scalar collects the executed operations reachable from
it into a :class:`Tape` and replays them in exact reverse execution order.

Shapes follow numpy broadcasting; gradients of broadcast inputs are summed
back down to the input's shape.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DegenerateSliceError",
    "ContractError",
    "NEG_INF",
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "add",
    "sub",
    "mul",
    "scale",
    "elementwise",
    "matmul",
    "transpose",
    "reshape",
    "take",
    "index",
    "concat",
    "stack",
    "tsum",
    "mean",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "affine",
    "layer_norm",
    "gelu",
    "sigmoid",
    "dropout",
    "backward",
]

# Additive mask constant; exp(NEG_INF - max) underflows to exactly 0.0.
NEG_INF = -1e9

_seq = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateSliceError(ValueError):
    """A reduction has no valid entries (fully masked slice or empty mask)."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class _Op:
    __slots__ = ("seq", "name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.seq = next(_seq)
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tensor:
    """A float64 array plus an optional gradient buffer.

    ``trainable`` marks leaves whose gradient should be populated by
    :func:`backward`.  Non-leaf tensors produced by operations carry a
    reference to the operation that created them.
    """

    __slots__ = ("data", "grad", "trainable", "_op", "_needs_grad", "name")

    def __init__(self, data, trainable: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self._op: _Op | None = None
        self._needs_grad = trainable
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, trainable={self.trainable}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def tensor(data, trainable: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, trainable=trainable, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, trainable=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, name: str, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.trainable = False
    out.name = None
    out._op = None
    out._needs_grad = any(t._needs_grad for t in inputs)
    if out._needs_grad:
        out._op = _Op(name, tuple(inputs), out, backward_fn)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t._needs_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast shapes {shapes}") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def bw(g):
        if a._needs_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b._needs_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, "mul", (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant scalar."""

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, "scale", (a,), bw)


def elementwise(a, b, kind: str) -> Tensor:
    if kind == "mul":
        return mul(a, b)
    if kind == "add":
        return add(a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(g):
        _accum(x, g * s * (1.0 - s))

    return _make(s, "sigmoid", (x,), bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth, so finite differences behave)."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        _accum(x, g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner))

    return _make(out, "gelu", (x,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bw(g):
        _accum(x, g * keep)

    return _make(x.data * keep, "dropout", (x,), bw)


# ---------------------------------------------------------------- structural


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])

    def bw(g):
        if a._needs_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b._needs_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(x, np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), "transpose", (x,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def bw(g):
        _accum(x, g.reshape(x.shape))

    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _make(out, "reshape", (x,), bw)


def index(x: Tensor, key) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""

    def bw(g):
        if not x._needs_grad:
            return
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        _accum(x, full)

    return _make(x.data[key], "index", (x,), bw)


def take(table: Tensor, ids, axis: int = 0) -> Tensor:
    """Gather rows (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    if axis != 0:
        raise ContractError("take only supports axis=0")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"ids out of range for table with {table.shape[0]} rows")

    def bw(g):
        if not table._needs_grad:
            return
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        _accum(table, full)

    return _make(table.data[ids], "take", (table,), bw)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat of nothing")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p._needs_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accum(p, g[tuple(sl)])

    return _make(out, "concat", parts, bw)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def bw(g):
        for i, p in enumerate(parts):
            _accum(p, np.take(g, i, axis=axis))

    return _make(out, "stack", parts, bw)


# ---------------------------------------------------------------- reductions


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(np.asarray(out), "sum", (x,), bw)


def mean(x: Tensor, axis=None, mask=None, keepdims: bool = False) -> Tensor:
    """Mean over ``axis``; with ``mask`` only entries where mask is set count."""
    if mask is None:
        n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
        return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), x.shape)
    cnt = m.sum(axis=axis, keepdims=True)
    if np.any(cnt == 0):
        raise DegenerateSliceError("masked mean over an empty slice")
    w = m / cnt

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, g * w)

    return _make(np.asarray((x.data * w).sum(axis=axis, keepdims=keepdims)), "mean", (x,), bw)


# ---------------------------------------------------------------- normalizers


def _softmax_np(v: np.ndarray, axis: int, mask) -> np.ndarray:
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if np.any(~m.any(axis=axis)):
            raise DegenerateSliceError("softmax over a fully masked slice")
        v = np.where(m, v, NEG_INF)
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Masked, max-shifted softmax.  Masked entries are exactly 0."""
    s = _softmax_np(x.data, axis, mask)

    def bw(g):
        _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, "softmax", (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    v = x.data
    z = v - v.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        _accum(x, g - s * g.sum(axis=axis, keepdims=True))

    return _make(out, "log_softmax", (x,), bw)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean over masked positions of -log softmax(logits)[target].

    ``logits`` has the class axis last; ``targets`` and ``mask`` match the
    leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    lead = logits.shape[:-1]
    if targets.shape != lead:
        raise DimensionError(f"targets shape {targets.shape} != logits lead shape {lead}")
    m = np.ones(lead, dtype=np.float64) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != lead:
        raise DimensionError(f"mask shape {m.shape} != {lead}")
    total = m.sum()
    if total == 0:
        raise DegenerateSliceError("cross entropy over an empty mask")
    safe_t = np.where(m > 0, targets, 0)
    if np.any((safe_t < 0) | (safe_t >= logits.shape[-1])):
        raise ContractError("target outside class range")
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, safe_t[..., None], 1.0, axis=-1)
    weights = onehot * (m / total)[..., None]
    return scale(tsum(mul(logp, weights)), -1.0)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` in a single recorded op."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"affine: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        if x._needs_grad:
            _accum(x, g @ weight.data.T)
        if weight._needs_grad:
            _accum(weight, x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        if bias is not None and bias._needs_grad:
            _accum(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out, "affine", inputs, bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    d = v.shape[-1]

    def bw(g):
        lead = g.reshape(-1, d)
        if gain._needs_grad:
            _accum(gain, (lead * xhat.reshape(-1, d)).sum(axis=0))
        if bias._needs_grad:
            _accum(bias, lead.sum(axis=0))
        if x._needs_grad:
            gx = g * gain.data
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            _accum(x, dx)

    return _make(out, "layer_norm", (x, gain, bias), bw)


# ---------------------------------------------------------------- tape


class Tape:
    """The executed operations reachable from a root, in execution order."""

    def __init__(self, ops: list[_Op]):
        self.ops = ops

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: set[int] = set()
        ops: list[_Op] = []
        stack_ = [root]
        while stack_:
            t = stack_.pop()
            op = t._op
            if op is None or id(op) in seen:
                continue
            seen.add(id(op))
            ops.append(op)
            stack_.extend(op.inputs)
        ops.sort(key=lambda o: o.seq)
        return cls(ops)

    def __len__(self) -> int:
        return len(self.ops)

    def names(self) -> list[str]:
        return [op.name for op in self.ops]

    def replay_backward(self, root: Tensor, seed_grad: np.ndarray) -> list[str]:
        """Run local backward rules in reverse order; returns visited op names."""
        visited = []
        root.grad = seed_grad.copy()
        for op in reversed(self.ops):
            out = op.output
            if out.grad is None:
                continue
            visited.append(op.name)
            op.backward_fn(out.grad)
            # all consumers of an intermediate ran before its producer
            out.grad = None
        return visited


def backward(loss: Tensor) -> Tape:
    """Populate ``.grad`` on every trainable tensor reachable from ``loss``.

    Gradients accumulate into existing buffers (call ``zero_grad`` between
    steps).  Returns the tape that was replayed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_root(loss)
    if loss.trainable:
        _accum(loss, np.ones_like(loss.data))
        return tape
    tape.replay_backward(loss, np.ones_like(loss.data))
    return tape


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None)))
