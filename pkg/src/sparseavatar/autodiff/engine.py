"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records primitive operations in execution order while a forward
pass runs; ``backward`` replays the records once in reverse, accumulating
adjoints into ``Tensor.grad``. Tensors wrap plain numpy arrays, so every
primitive is vectorized and the per-step Python overhead stays proportional
to the number of *operations*, not the number of scalars.

Conventions:
  * ops record onto a tape only when some input requires gradients and is
    attached to a tape; inference paths simply pass ``tape=None`` leaves and
    run the identical numpy forward computation,
  * ``backward`` never touches ``Tensor.data``; forward values survive the
    reverse pass untouched,
  * broadcasting is supported for elementwise ops; adjoints are summed back
    down to the operand shape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tsum",
    "tmean",
    "exp",
    "log",
    "sin",
    "cos",
    "tanh",
    "sigmoid",
    "softplus",
    "relu",
    "tabs",
    "sqrt",
    "square",
    "pow_const",
    "clip_min",
    "clip_max",
    "maximum",
    "minimum",
    "where_mask",
    "concat",
    "reshape",
    "slice_last",
    "permute_along_last",
    "gather_rows",
    "exclusive_cumsum",
]


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended as the forward computation executes, so the list is
    topologically ordered by construction; the reverse sweep visits each node
    exactly once.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []


class _Node:
    __slots__ = ("out", "inputs", "bw")

    def __init__(self, out, inputs, bw):
        self.out = out
        self.inputs = inputs
        self.bw = bw


class Tensor:
    """A numpy array plus an adjoint slot and optional tape attachment."""

    __slots__ = ("data", "grad", "tape", "requires_grad")

    def __init__(self, data, tape=None, requires_grad=False, grad=None):
        self.data = np.asarray(data)
        self.grad = grad
        self.tape = tape
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        """Constant view of this tensor's values; gradients stop here."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # operator sugar; all dispatch to the module-level primitives
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _accum(t, g):
    """Add an adjoint contribution to a tensor, handling broadcast shapes."""
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
        # param views arrive with a preassigned grad buffer; intermediates
        # allocate lazily so unused branches cost nothing
    t.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, inputs, bw):
    tape = None
    rg = False
    for t in inputs:
        if t.requires_grad:
            rg = True
            if t.tape is not None:
                tape = t.tape
                break
    out = Tensor(data, tape if (rg and tape is not None) else None, rg and tape is not None)
    if out.tape is not None:
        tape.nodes.append(_Node(out, inputs, bw))
    return out


def backward(tape, loss):
    """Run the reverse sweep of ``tape`` seeding from scalar ``loss``.

    Adjoints accumulate into each participating tensor's ``grad``; parameter
    views share storage with their ParamStore, so gradients land in the flat
    store directly.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward seed must be scalar, got shape {loss.data.shape}")
    if loss.tape is not tape:
        raise ValueError("loss tensor does not belong to this tape")
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        node.bw(g, *node.inputs)


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b):
    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g / b.data)
        if b.requires_grad:
            _accum(b, -g * a.data / (b.data * b.data))

    return _make(a.data / b.data, (a, b), bw)


def neg(a):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, -g)

    return _make(-a.data, (a,), bw)


def matmul(a, b):
    """2-D matrix product; higher-rank operands should reshape around it."""

    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def tsum(a, axis=None, keepdims=False):
    def bw(g, a):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, as_tensor(np.asarray(1.0 / n, dtype=a.data.dtype)))


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a):
    out_data = np.exp(a.data)

    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * out_data)

    return _make(out_data, (a,), bw)


def log(a):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def sin(a):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * np.cos(a.data))

    return _make(np.sin(a.data), (a,), bw)


def cos(a):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, -g * np.sin(a.data))

    return _make(np.cos(a.data), (a,), bw)


def tanh(a):
    out_data = np.tanh(a.data)

    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bw)


def sigmoid(a):
    # stable two-sided evaluation
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype, copy=False)

    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw)


def softplus(a, beta=1.0):
    """log(1 + exp(beta x)) / beta, numerically stable on both tails."""
    x = a.data * beta
    out_data = (np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))) / beta

    def bw(g, a):
        if a.requires_grad:
            xx = a.data * beta
            sig = np.where(xx >= 0, 1.0 / (1.0 + np.exp(-np.abs(xx))), np.exp(-np.abs(xx)) / (1.0 + np.exp(-np.abs(xx))))
            _accum(a, g * sig)

    return _make(out_data.astype(a.data.dtype, copy=False), (a,), bw)


def relu(a):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * (a.data > 0))

    return _make(np.maximum(a.data, 0.0), (a,), bw)


def tabs(a):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def bw(g, a):
        if a.requires_grad:
            _accum(a, g / (2.0 * out_data))

    return _make(out_data, (a,), bw)


def square(a):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), bw)


def pow_const(a, p):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * p * np.power(a.data, p - 1))

    return _make(np.power(a.data, p), (a,), bw)


def clip_min(a, lo):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * (a.data > lo))

    return _make(np.maximum(a.data, lo), (a,), bw)


def clip_max(a, hi):
    def bw(g, a):
        if a.requires_grad:
            _accum(a, g * (a.data < hi))

    return _make(np.minimum(a.data, hi), (a,), bw)


def maximum(a, b):
    mask = a.data >= b.data  # ties route to the first operand

    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g * mask)
        if b.requires_grad:
            _accum(b, g * ~mask)

    return _make(np.maximum(a.data, b.data), (a, b), bw)


def minimum(a, b):
    mask = a.data <= b.data

    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g * mask)
        if b.requires_grad:
            _accum(b, g * ~mask)

    return _make(np.minimum(a.data, b.data), (a, b), bw)


def where_mask(mask, a, b):
    """Select a where mask else b; mask is a fixed boolean array."""
    mask = np.asarray(mask, dtype=bool)

    def bw(g, a, b):
        if a.requires_grad:
            _accum(a, g * mask)
        if b.requires_grad:
            _accum(b, g * ~mask)

    return _make(np.where(mask, a.data, b.data), (a, b), bw)


# ---------------------------------------------------------------------------
# shape / indexing primitives


def concat(tensors, axis=-1):
    tensors = tuple(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, *ts):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(ts, parts):
            if t.requires_grad:
                _accum(t, p)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def reshape(a, shape):
    in_shape = a.data.shape

    def bw(g, a):
        if a.requires_grad:
            _accum(a, g.reshape(in_shape))

    return _make(a.data.reshape(shape), (a,), bw)


def slice_last(a, start, stop):
    """Contiguous slice along the last axis."""
    in_shape = a.data.shape

    def bw(g, a):
        if a.requires_grad:
            gg = np.zeros(in_shape, dtype=g.dtype)
            gg[..., start:stop] = g
            _accum(a, gg)

    return _make(a.data[..., start:stop], (a,), bw)


def permute_along_last(a, idx):
    """Reorder the last axis by a per-row permutation (e.g. an argsort).

    idx must contain each index exactly once per row; the adjoint is then a
    plain scatter without accumulation.
    """
    idx = np.asarray(idx)

    def bw(g, a):
        if a.requires_grad:
            gg = np.zeros_like(g)
            np.put_along_axis(gg, idx, g, axis=-1)
            _accum(a, gg)

    return _make(np.take_along_axis(a.data, idx, axis=-1), (a,), bw)


def gather_rows(a, idx):
    """Select rows a[idx] along axis 0; duplicate indices accumulate."""
    idx = np.asarray(idx)
    n_rows = a.data.shape[0]

    def bw(g, a):
        if a.requires_grad:
            gg = np.zeros((n_rows,) + g.shape[1:], dtype=g.dtype)
            np.add.at(gg, idx, g)
            _accum(a, gg)

    return _make(a.data[idx], (a,), bw)


def exclusive_cumsum(a, axis=-1):
    """out[..., k] = sum of a[..., :k]; the transmittance prefix sum."""
    c = np.cumsum(a.data, axis=axis)
    out_data = np.zeros_like(c)
    sl_out = [slice(None)] * a.data.ndim
    sl_in = [slice(None)] * a.data.ndim
    sl_out[axis] = slice(1, None)
    sl_in[axis] = slice(None, -1)
    out_data[tuple(sl_out)] = c[tuple(sl_in)]

    def bw(g, a):
        if not a.requires_grad:
            return
        # d out_k / d a_j = 1 for j < k  =>  grad_j = sum_{k > j} g_k
        rev = np.flip(g, axis=axis)
        rc = np.cumsum(rev, axis=axis)
        rc = np.flip(rc, axis=axis)
        gg = np.zeros_like(rc)
        gg[tuple(sl_in)] = rc[tuple(sl_out)]
        _accum(a, gg)

    return _make(out_data, (a,), bw)
