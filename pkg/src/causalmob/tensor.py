"""Dense-tensor engine with reverse-mode automatic differentiation.

Minimal numpy-backed graph engine: every op returns a new :class:`Tensor`
that remembers its parents and a closure pushing gradients back to them.
``Tensor.backward()`` walks the recorded graph once in reverse topological
order. Only what the predictor needs is implemented: 2-D matmul, a handful
of pointwise ops, last-axis concat/slice, embedding gather, row gather and
a fused softmax cross-entropy.

Broadcasting is deliberately narrow: equal shapes, scalars, or a trailing
suffix against leading batch axes (bias-style). Anything else raises so
that adjoints stay simple and checkable.
"""

from __future__ import annotations

import os

import numpy as np

# Finite-value assertion after every forward op. Slow; enable while debugging.
DEBUG_FINITE = os.environ.get("CAUSALMOB_DEBUG", "") not in ("", "0")

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Reverse-mode pass from this scalar through the recorded graph.

        Sets ``.grad`` on every reachable tensor with ``requires_grad``;
        grads are overwritten, not accumulated across calls. Leaves that do
        not lie on a path to this node keep ``grad=None`` (read as zero).
        """
        if self.data.ndim != 0:
            raise ValueError(f"backward root must be a scalar, got shape {self.data.shape}")
        order = _topo_order(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _topo_order(root):
    """Nodes reachable from ``root`` (requires_grad only), parents first."""
    if not root.requires_grad:
        return [root]
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            order.append(node)
            stack.pop()
    return order


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _result(data, parents, backward):
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by forward op")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_broadcast(a, b, op):
    """Allow equal shapes, scalars, or trailing-suffix (bias) broadcast."""
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) < len(big) and big[len(big) - len(small):] == small:
        return
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not broadcast (leading/scalar only)")


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad.reshape(shape)


# -- pointwise -----------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    _check_broadcast(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    _check_broadcast(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def neg(a):
    def bw(g):
        if a.requires_grad:
            a.grad -= g

    return _result(-a.data, (a,), bw)


def tanh(a):
    out_data = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            a.grad += g * (1.0 - out_data * out_data)

    return _result(out_data, (a,), bw)


def sigmoid(a):
    # stable both tails: exp of a non-positive argument only
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype, copy=False)

    def bw(g):
        if a.requires_grad:
            a.grad += g * out_data * (1.0 - out_data)

    return _result(out_data, (a,), bw)


# -- structure -----------------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ for {a.shape} x {b.shape}")

    def bw(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw)


def concat(parts, axis=-1):
    """Concatenate along the last axis."""
    if axis not in (-1, parts[0].data.ndim - 1):
        raise ShapeError("concat supports the last axis only")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ, {parts[0].shape} vs {p.shape}")
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.grad += g[..., lo:hi]

    return _result(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), bw)


def slice_last(a, start, stop):
    """Slice ``[start:stop]`` along the last axis."""
    if not (0 <= start <= stop <= a.shape[-1]):
        raise ShapeError(f"slice [{start}:{stop}] out of bounds for last extent {a.shape[-1]}")

    def bw(g):
        if a.requires_grad:
            a.grad[..., start:stop] += g

    return _result(a.data[..., start:stop], (a,), bw)


def sum_all(a):
    def bw(g):
        if a.requires_grad:
            a.grad += g  # g is scalar; broadcasts

    return _result(a.data.sum(), (a,), bw)


def mean_all(a):
    n = a.data.size

    def bw(g):
        if a.requires_grad:
            a.grad += g / n

    return _result(a.data.mean(), (a,), bw)


def lookup(table, indices):
    """Gather rows of an embedding table.

    ``indices`` may be a scalar or any integer array; the result has shape
    ``indices.shape + (d,)``. The backward pass scatter-adds into the
    looked-up rows only.
    """
    idx = np.asarray(indices)
    n_rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise IndexError(f"lookup index {bad} out of range for table with {n_rows} rows")

    def bw(g):
        if table.requires_grad:
            np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, table.shape[-1]))

    return _result(table.data[idx], (table,), bw)


def take_rows(a, indices):
    """Gather rows along axis 0; scatter-add on the way back."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise IndexError(f"row index {bad} out of range for extent {a.shape[0]}")

    def bw(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    return _result(a.data[idx], (a,), bw)


def gather_cols(a, cols):
    """Pick one column per row of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_cols expects a 2-D tensor, got {a.shape}")
    idx = np.asarray(cols)
    n, c = a.shape
    if idx.shape != (n,):
        raise ShapeError(f"col index shape {idx.shape} does not match rows {n}")
    if idx.size and (idx.min() < 0 or idx.max() >= c):
        raise IndexError(f"column index out of range for extent {c}")
    rows = np.arange(n)

    def bw(g):
        if a.requires_grad:
            np.add.at(a.grad, (rows, idx), g)

    return _result(a.data[rows, idx], (a,), bw)


def log(a):
    def bw(g):
        if a.requires_grad:
            a.grad += g / a.data

    return _result(np.log(a.data), (a,), bw)


def maximum_scalar(a, floor):
    """Elementwise max(a, floor); gradient flows only where a wins."""
    keep = a.data > floor

    def bw(g):
        if a.requires_grad:
            a.grad += g * keep

    return _result(np.maximum(a.data, np.asarray(floor, dtype=a.dtype)), (a,), bw)


def softmax_last(a):
    """Softmax along the last axis, on the graph."""
    s = softmax(a.data)

    def bw(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            a.grad += s * (g - inner)

    return _result(s, (a,), bw)


# -- loss ----------------------------------------------------------------


def softmax(x):
    """Row-stabilized softmax of a plain array (no graph)."""
    x = np.asarray(x)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """``-log softmax(logits)[target]`` per row, stabilized by max-subtraction.

    ``logits`` is ``[C]`` with an int target, or ``[B, C]`` with ``[B]``
    targets; returns a scalar or a ``[B]`` loss vector accordingly.
    """
    squeeze = logits.data.ndim == 1
    z = logits.data[None, :] if squeeze else logits.data
    if z.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects 1-D or 2-D logits, got {logits.shape}")
    n, c = z.shape
    if c < 2:
        raise ShapeError(f"softmax_cross_entropy needs at least 2 classes, got {c}")
    t = np.atleast_1d(np.asarray(targets))
    if t.shape != (n,):
        raise ShapeError(f"targets shape {t.shape} does not match logits rows {n}")
    if t.min() < 0 or t.max() >= c:
        bad = int(t.min()) if t.min() < 0 else int(t.max())
        raise IndexError(f"target label {bad} out of range for {c} classes")

    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    losses = lse - shifted[rows, t]

    def bw(g):
        if logits.requires_grad:
            p = softmax(z)
            p[rows, t] -= 1.0
            gg = g[:, None] if not squeeze else g
            grad = p * gg
            logits.grad += grad[0] if squeeze else grad

    data = losses[0] if squeeze else losses
    return _result(data.astype(z.dtype, copy=False), (logits,), bw)
