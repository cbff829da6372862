"""Reverse-mode autodiff over numpy arrays.

A ``Tensor`` wraps a float64 ndarray plus an optional gradient buffer
and a record of how it was produced (parent tensors and a vector-
Jacobian closure).  ``backward()`` on a scalar result topologically
sorts the tape and accumulates gradients into every tensor that
requires them.  Everything is float64 end to end: scoring paths
downstream compare log-probabilities at 1e-9 tolerances, which float32
accumulation would not survive.

Elementwise hot spots (softmax, layer norm, GELU, cross-entropy) are
delegated to the active kernel backend; matrix products go through
BLAS via ``np.matmul`` on both backends.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (backward on detached tensor,
    repeated backward without a fresh forward, ...)."""


def _as_array(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array with shape, a flat row-major buffer, and an
    optional same-shaped gradient (``grad`` is None until backward
    reaches the tensor)."""

    __slots__ = ("array", "grad", "requires_grad", "_parents", "_vjp",
                 "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        self.array = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._backward_done = False

    # -- structural views ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the underlying buffer."""
        return self.array.reshape(-1)

    def item(self) -> float:
        return float(self.array.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.array)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return add(self, scale(_coerce(other, self), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- backward ----------------------------------------------------------
    def backward(self) -> None:
        """Accumulate gradients of this scalar w.r.t. the whole tape."""
        if self.array.size != 1:
            raise ShapeError(
                f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError(
                "backward() on a detached tensor: nothing on the tape "
                "requires gradients")
        if self._backward_done:
            raise GraphError(
                "backward() called twice on the same result; run a new "
                "forward pass first")
        self._backward_done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.array)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg.astype(np.float64, copy=False)
                else:
                    acc += pg


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _result(array: np.ndarray, parents: tuple[Tensor, ...],
            vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
            ) -> Tensor:
    out = Tensor(array)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return np.ascontiguousarray(g)


# -- elementwise / structural ops -----------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.array + b.array

    def vjp(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _result(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.array * b.array

    def vjp(g):
        return (_sum_to_shape(g * b.array, a.shape),
                _sum_to_shape(g * a.array, b.shape))

    return _result(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.array * s

    def vjp(g):
        return (g * s,)

    return _result(out, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.array, b.array)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.array, -1, -2))
        gb = np.matmul(np.swapaxes(a.array, -1, -2), g)
        return _sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape)

    return _result(out, (a, b), vjp)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.ascontiguousarray(np.transpose(a.array, axes))
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _result(out, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.array.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _result(out, (a,), vjp)


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.array.sum())

    def vjp(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), vjp)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` with ids of any shape; the
    gradient scatter-adds duplicate rows."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D table")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError("gather_rows: id out of range")
    out = table.array[idx]

    def vjp(g):
        gt = np.zeros_like(table.array)
        kernels.scatter_add_rows(
            gt, idx.reshape(-1),
            np.ascontiguousarray(g.reshape(-1, table.shape[1])))
        return (gt,)

    return _result(out, (table,), vjp)


def bias_lookup(table: Tensor, buckets: np.ndarray) -> Tensor:
    """Per-head additive attention bias: ``table[h, buckets[i, j]]``.

    ``table`` is [heads, num_buckets]; ``buckets`` an int matrix
    [q_len, k_len]; result is [heads, q_len, k_len].
    """
    idx = np.ascontiguousarray(buckets, dtype=np.int64)
    out = np.ascontiguousarray(table.array[:, idx])

    def vjp(g):
        gt = np.zeros_like(table.array)
        kernels.scatter_add_bias(gt, idx, np.ascontiguousarray(g))
        return (gt,)

    return _result(out, (table,), vjp)


# -- kernel-backed nonlinearities -----------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along ``axis``."""
    moved = np.moveaxis(a.array, axis, -1)
    lead = moved.shape[:-1]
    d = moved.shape[-1]
    y2 = kernels.softmax_fwd(np.ascontiguousarray(moved.reshape(-1, d)))
    out = np.moveaxis(y2.reshape(lead + (d,)), -1, axis)

    def vjp(g):
        g2 = np.ascontiguousarray(
            np.moveaxis(g, axis, -1).reshape(-1, d))
        gx2 = kernels.softmax_bwd(y2, g2)
        return (np.ascontiguousarray(
            np.moveaxis(gx2.reshape(lead + (d,)), -1, axis)),)

    return _result(np.ascontiguousarray(out), (a,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Layer norm over the last axis with learned gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    x2 = np.ascontiguousarray(x.array.reshape(-1, d))
    y2, mu, rstd = kernels.layernorm_fwd(x2, gain.array, bias.array, eps)

    def vjp(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        gx2, dgain, dbias = kernels.layernorm_bwd(
            x2, gain.array, mu, rstd, g2)
        return gx2.reshape(x.shape), dgain, dbias

    return _result(y2.reshape(x.shape), (x, gain, bias), vjp)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximate GELU."""
    flat = x.array.reshape(-1)
    y = kernels.gelu_fwd(flat)

    def vjp(g):
        return (kernels.gelu_bwd(flat, g.reshape(-1)).reshape(x.shape),)

    return _result(y.reshape(x.shape), (x,), vjp)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when ``p == 0``."""
    if p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = x.array * keep

    def vjp(g):
        return (g * keep,)

    return _result(out, (x,), vjp)


IGNORE_INDEX = -100


def cross_entropy(logits: Tensor, targets, ignore_index: int = IGNORE_INDEX
                  ) -> Tensor:
    """Mean negative log-likelihood over non-ignored rows.

    ``logits`` is [n, vocab]; ``targets`` an int vector of length n with
    ``ignore_index`` marking rows to skip.  A batch with every row
    ignored is an error, as is a non-finite loss (the usual divergence
    signal upstream).
    """
    if logits.ndim != 2:
        raise ShapeError("cross_entropy expects 2-D logits")
    t = np.ascontiguousarray(targets, dtype=np.int64)
    if t.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy targets must be a vector matching "
                         "the logits rows")
    valid = t != ignore_index
    if not valid.any():
        raise ValueError("cross_entropy: every target is ignore_index")
    if t[valid].min() < 0 or t[valid].max() >= logits.shape[1]:
        raise IndexError("cross_entropy: target id out of range")
    x2 = np.ascontiguousarray(logits.array)
    loss_sum, n_valid, probs = kernels.cross_entropy_fwd(
        x2, t, ignore_index)
    loss = loss_sum / n_valid
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"cross_entropy produced a non-finite loss ({loss})")

    def vjp(g):
        return (kernels.cross_entropy_bwd(
            probs, t, ignore_index, n_valid, float(g.reshape(-1)[0])),)

    return _result(np.asarray(loss), (logits,), vjp)
