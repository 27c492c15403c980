"""Reverse-mode differentiation over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape everything runs as plain
numpy, which is what inference and the ensemble target pass use.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .special import digamma, lgamma

DTYPE = np.float64

_ACTIVE_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    """Raised when a primitive receives operands whose shapes do not conform."""

    def __init__(self, primitive: str, *shapes: tuple):
        self.primitive = primitive
        self.shapes = shapes
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{primitive}: incompatible shapes {shown}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "frozen", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.frozen = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; nested tapes are allowed and only the
    innermost one records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, backward) -> Tensor:
    out = Tensor(out_data)
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].nodes.append(_Node(op, inputs, out, backward))
    return out


def backward(tape: Tape, loss: Tensor) -> list[Tensor]:
    """Propagate d(loss) back through ``tape``.

    Leaf tensors (requires_grad, not produced by any recorded node) get their
    ``.grad`` accumulated. Returns those leaves in first-use order. The tape is
    cleared afterwards.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(n.output) for n in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        in_grads = node.backward(g_out)
        for inp, g in zip(node.inputs, in_grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.shape:
                raise ShapeError(f"{node.op} (backward)", g.shape, inp.shape)
            key = id(inp)
            if key in produced:
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
            else:
                leaves[key] = inp
                inp.grad = g.copy() if inp.grad is None else inp.grad + g
    if id(loss) not in produced and loss.requires_grad:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        leaves[id(loss)] = loss
    tape.clear()
    return list(leaves.values())


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _record("div", (a, b), out,
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum propagates NaN, so a diverged layer cannot hide behind the ReLU
    return _record("relu", (a,), np.maximum(a.data, 0.0), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), stable for large |a|."""
    out = np.logaddexp(0.0, a.data)
    return _record("softplus", (a,), out, lambda g: (g * _sigmoid(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where the clamp is active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _record("clip", (a,), np.clip(a.data, lo, hi), lambda g: (g * inside,))


def lgamma_t(a: Tensor) -> Tensor:
    return _record("lgamma", (a,), lgamma(a.data), lambda g: (g * digamma(a.data),))


# --- shape / reduction -----------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), out, bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record("getitem", (a,), out, bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


# --- network primitives ----------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map x @ w + b with x (B, in), w (in, out), b (out,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError("linear(bias)", w.shape, b.shape)
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        grads = [g @ w.data.T if x.requires_grad else None, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record("linear", inputs, out, bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid temporal convolution.

    x: (B, C, L); w: (F, C, K); b: (F,). Output (B, F, (L - K) // stride + 1).
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv1d", x.shape, w.shape)
    if x.shape[2] < w.shape[2]:
        raise ShapeError("conv1d(length)", x.shape, w.shape)
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    n, c, length = x.shape
    f, _, k = w.shape
    cols = sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]  # (B, C, Lout, K)
    l_out = cols.shape[2]
    cols = cols.transpose(0, 2, 1, 3).reshape(n, l_out, c * k)
    wmat = w.data.reshape(f, c * k)
    out = cols @ wmat.T  # (B, Lout, F)
    if b is not None:
        out = out + b.data
    out = out.transpose(0, 2, 1)

    def bw(g):
        gt = g.transpose(0, 2, 1)  # (B, Lout, F)
        gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
        gx = None
        if x.requires_grad:
            dcols = (gt @ wmat).reshape(n, l_out, c, k)
            gx = np.zeros_like(x.data)
            span = (l_out - 1) * stride + 1
            for j in range(k):
                gx[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv1d", inputs, np.ascontiguousarray(out), bw)


def global_max_pool(x: Tensor) -> Tensor:
    """Max over the last (time) axis: (B, F, L) -> (B, F)."""
    if x.ndim != 3:
        raise ShapeError("global_max_pool", x.shape)
    idx = x.data.argmax(axis=2)
    out = np.take_along_axis(x.data, idx[..., None], axis=2)[..., 0]

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=2)
        return (full,)

    return _record("global_max_pool", (x,), out, bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout: training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record("dropout", (x,), x.data * mask, lambda g: (g * mask,))


def log_softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        p = np.exp(out)
        return ((g - p * g.sum(axis=axis, keepdims=True)) / temperature,)

    return _record("log_softmax", (x,), out, bw)


def softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    z = x.data / temperature
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        return ((out * (g - (g * out).sum(axis=axis, keepdims=True))) / temperature,)

    return _record("softmax", (x,), out, bw)
