"""Dense numpy tensor with taped reverse-mode differentiation.

Only the operations a post-LN transformer needs are provided. Broadcasting is
restricted to bias-style addition (the right operand's shape is a suffix of
the left operand's shape) and to the row-wise fused ops.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording for the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("division is only defined by a scalar")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self):
        return tsum(self)

    def backward(self, params: Iterable[Tensor] | None = None) -> None:
        backward(self, params)


def _wrap(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that take part in differentiation, inputs first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    ``params`` is an optional leaf registry: every listed tensor ends up with a
    grad buffer, so leaves unreachable from ``loss`` hold zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.zero_grad()
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        lead = tuple(range(a.ndim - b.ndim))
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=lead)))
    if a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        lead = tuple(range(b.ndim - a.ndim))
        return _result(a.data + b.data, (a, b), lambda g: (g.sum(axis=lead), g))
    raise ValueError(f"add: shapes {a.shape} and {b.shape} are not bias-compatible")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def tsum(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                   lambda g: (np.broadcast_to(g, a.shape).copy(),))


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` (broadcastable to ``a``) is true by a constant."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, a.dtype.type(value), a.data)
    return _result(out, (a,), lambda g: (np.where(mask, 0, g).astype(g.dtype),))


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, fn)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``weight[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range for table of {weight.shape[0]} rows")

    def fn(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (out,)

    return _result(weight.data[ids], (weight,), fn)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared across ``a``'s leading axes) or has the same
    leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    if b.ndim == 2:
        k = a.shape[-1]
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def fn(g):
            g2 = g.reshape(-1, b.shape[1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _result(out, (a, b), fn)
    if a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch axes of {a.shape} and {b.shape} differ")

    def fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), fn)


# ---------------------------------------------------------------- fused row ops


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax: axis {axis} out of range for {x.ndim}-d input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), fn)


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    width = x.shape[-1]
    if gain.shape != (width,) or offset.shape != (width,):
        raise ValueError(f"layer_norm: gain/offset {gain.shape}/{offset.shape} vs width {width}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + offset.data

    def fn(g):
        lead = tuple(range(x.ndim - 1))
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gain, offset), fn)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: np.ndarray, pad_id: int) -> Tensor:
    """Mean negative log-likelihood over the non-pad target positions."""
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and targets.max() >= vocab:
        raise ValueError(f"cross_entropy: target id {targets.max()} >= vocab size {vocab}")
    keep = targets != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy: every target position is padding")
    logp = log_softmax(logits.data)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * keep).sum() / count

    def fn(g):
        d = np.exp(logp)
        np.put_along_axis(d, targets[..., None],
                          np.take_along_axis(d, targets[..., None], axis=-1) - 1, axis=-1)
        d *= (keep / count)[..., None].astype(d.dtype)
        return (d * g,)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), fn)
