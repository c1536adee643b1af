"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward()
walks the tape in reverse topological order and accumulates vector-Jacobian
products into every reachable parameter. Only the ops the encoder needs are
implemented, all with exact gradients.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray


def sum_to_shape(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[Array], Array], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # --- graph construction -------------------------------------------------

    def backward(self, seed: Array | None = None) -> None:
        """Accumulate gradients of self into every upstream tensor."""
        if seed is None:
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(seed)
        for node in reversed(topo):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # --- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, Tensor(np.asarray(-1.0, dtype=self.data.dtype)))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return narrow(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _build(data: Array, links: Sequence[tuple[Tensor, Callable[[Array], Array]]]) -> Tensor:
    live = [(p, f) for p, f in links if p.requires_grad]
    out = Tensor(data, requires_grad=bool(live))
    if live:
        out._parents = tuple(p for p, _ in live)
        out._vjps = tuple(f for _, f in live)
    return out


# --- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return _build(
        a.data + b.data,
        [
            (a, lambda g: sum_to_shape(g, a.data.shape)),
            (b, lambda g: sum_to_shape(g, b.data.shape)),
        ],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _build(
        a.data - b.data,
        [
            (a, lambda g: sum_to_shape(g, a.data.shape)),
            (b, lambda g: sum_to_shape(-g, b.data.shape)),
        ],
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _build(
        a.data * b.data,
        [
            (a, lambda g: sum_to_shape(g * b.data, a.data.shape)),
            (b, lambda g: sum_to_shape(g * a.data, b.data.shape)),
        ],
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    return _build(
        a.data / b.data,
        [
            (a, lambda g: sum_to_shape(g / b.data, a.data.shape)),
            (b, lambda g: sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape)),
        ],
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    return _build(
        a.data @ b.data,
        [
            (a, lambda g: sum_to_shape(g @ b.data.swapaxes(-1, -2), a.data.shape)),
            (b, lambda g: sum_to_shape(a.data.swapaxes(-1, -2) @ g, b.data.shape)),
        ],
    )


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out = a.data**p
    return _build(out, [(a, lambda g: g * p * a.data ** (p - 1.0))])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _build(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    return _build(np.log(a.data), [(a, lambda g: g / a.data)])


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _build(out, [(a, lambda g: g * (1.0 - out * out))])


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _build(np.where(keep, a.data, 0.0), [(a, lambda g: g * keep)])


def gelu(a: Tensor) -> Tensor:
    # tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    c = math.sqrt(2.0 / math.pi)
    x = a.data
    inner = c * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def back(g: Array) -> Array:
        dinner = c * (1.0 + 3 * 0.044715 * x**2)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)

    return _build(out, [(a, back)])


# --- reductions and shaping -----------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g: Array) -> Array:
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _build(out, [(a, back)])


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return mul(
        tsum(a, axis=axis, keepdims=keepdims),
        Tensor(np.asarray(1.0 / n, dtype=a.data.dtype)),
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _build(
        a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))]
    )


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _build(a.data.swapaxes(i, j), [(a, lambda g: g.swapaxes(i, j))])


def expand(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Broadcast to a larger shape; gradient sums back."""
    return _build(
        np.broadcast_to(a.data, shape).copy(),
        [(a, lambda g: sum_to_shape(g, a.data.shape))],
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    links = []
    offset = 0
    for t in tensors:
        width = t.data.shape[axis]
        lo, hi = offset, offset + width

        def back(g: Array, lo=lo, hi=hi) -> Array:
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        links.append((t, back))
        offset += width
    return _build(out, links)


def narrow(a: Tensor, key) -> Tensor:
    """Basic or boolean indexing; each output element maps to one input cell."""
    out = a.data[key]

    def back(g: Array) -> Array:
        z = np.zeros_like(a.data)
        z[key] = g
        return z

    return _build(out, [(a, back)])


# --- indexed access ----------------------------------------------------------


def gather_rows(table: Tensor, ids: Array) -> Tensor:
    """table (n, d) indexed by an integer array; repeats accumulate on backward."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError("gather index out of range")
    out = table.data[ids]

    def back(g: Array) -> Array:
        z = np.zeros_like(table.data)
        np.add.at(z, ids, g)
        return z

    return _build(out, [(table, back)])


def pick_last(a: Tensor, idx: Array) -> Tensor:
    """a (n, c) -> (n,) selecting idx[i] from row i."""
    idx = np.asarray(idx)
    n, c = a.data.shape
    if idx.shape != (n,):
        raise ShapeError(f"index shape {idx.shape} does not match rows {n}")
    if idx.size and (idx.min() < 0 or idx.max() >= c):
        raise ShapeError("class index out of range")
    rows = np.arange(n)
    out = a.data[rows, idx]

    def back(g: Array) -> Array:
        z = np.zeros_like(a.data)
        z[rows, idx] = g
        return z

    return _build(out, [(a, back)])


# --- composites ----------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    # detached max shift: exact, softmax is shift-invariant
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    shift = a.data.max(axis=axis, keepdims=True)
    inner = log(tsum(exp(sub(a, Tensor(shift))), axis=axis, keepdims=False))
    return add(inner, Tensor(np.squeeze(shift, axis=axis)))


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-12) -> Tensor:
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = pow_scalar(add(var, Tensor(np.asarray(eps, dtype=x.data.dtype))), -0.5)
    return add(mul(mul(centered, inv), scale), shift)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return x
    if not 0.0 < p < 1.0:
        raise ShapeError(f"dropout probability {p} outside [0, 1)")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


def gradients(loss: Tensor, tensors: Sequence[Tensor]) -> list[Array]:
    """Backward from a scalar loss, returning grads aligned with `tensors`."""
    if loss.data.ndim != 0:
        raise ShapeError("loss must be a scalar")
    if not np.isfinite(loss.data):
        raise FloatingPointError("loss is not finite")
    for t in tensors:
        t.zero_grad()
    loss.backward()
    return [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]
