"""Minimal dense-tensor engine with reverse-mode differentiation.

Design notes:
  * float32 by default; checked mode switches to float64 and validates
    finiteness after every op (used by the verification suite).
  * broadcasting is supported for add/mul only as far as the model graph
    needs it; gradients are reduced back with `_unbroadcast`.
  * tensors are immutable after construction except for `.grad`.
"""

import contextlib

import numpy as np

from . import backend


class DimensionError(ValueError):
    """Shape mismatch between operands."""


class NonFiniteError(FloatingPointError):
    """NaN/Inf detected in checked mode."""


_state = {"dtype": np.float32, "checked": False, "no_grad": 0}


def default_dtype():
    return _state["dtype"]


def set_checked(flag):
    """Checked mode: float64 everywhere + NaN/Inf detection."""
    _state["checked"] = bool(flag)
    _state["dtype"] = np.float64 if flag else np.float32


def is_checked():
    return _state["checked"]


@contextlib.contextmanager
def checked_mode():
    prev = _state["checked"]
    set_checked(True)
    try:
        yield
    finally:
        set_checked(prev)


@contextlib.contextmanager
def no_grad():
    """Skip graph construction (inference / frozen forward passes)."""
    _state["no_grad"] += 1
    try:
        yield
    finally:
        _state["no_grad"] -= 1


def _grad_enabled():
    return _state["no_grad"] == 0


def _check(arr):
    if _state["checked"] and not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value produced")
    return arr


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _state["dtype"])
        _check(self.data)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled()
        self._backward = None
        self._parents = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------
    def _accum(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("tensor/tensor division is not part of the graph")

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_state["dtype"]))


def _make(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = _check(data)
    out.grad = None
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(p for p in parents if p.requires_grad) if track else ()
    out._backward = backward if track else None
    return out


# -- primitive ops -----------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bw)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    data = a.data * c

    def bw(g):
        if a.requires_grad:
            a._accum(g * c)

    return _make(data, (a,), bw)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), bw)


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            a._accum(g * (1.0 - data * data))

    return _make(data, (a,), bw)


def relu(a):
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)

    def bw(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0))

    return _make(data, (a,), bw)


def reshape(a, shape):
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            a._accum(g.reshape(a.shape))

    return _make(data, (a,), bw)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bw(g):
        if a.requires_grad:
            a._accum(np.transpose(g, inv))

    return _make(data, (a,), bw)


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.shape).copy())

    return _make(np.asarray(data), (a,), bw)


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis, keepdims), 1.0 / n)


def softmax(a, axis=-1):
    """Stabilized softmax along `axis` (kernel-backed on the last axis)."""
    a = _as_tensor(a)
    x = a.data
    moved = axis not in (-1, x.ndim - 1)
    if moved:
        x = np.moveaxis(x, axis, -1)
    flat = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    y = backend.softmax2d(flat).reshape(x.shape)
    if moved:
        y = np.moveaxis(y, -1, axis)
    data = y

    def bw(g):
        if not a.requires_grad:
            return
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accum((g - dot) * data)

    return _make(data, (a,), bw)


def layer_norm(x, gain, bias, eps=1e-5):
    """Layer norm over the last axis with learned affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last axis {d}")
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    y, mean, rstd = backend.layer_norm_fwd(flat, gain.data, bias.data, eps)
    data = y.reshape(x.shape)

    def bw(g):
        gflat = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = backend.layer_norm_bwd(gflat, flat, gain.data, mean, rstd)
        if x.requires_grad:
            x._accum(dx.reshape(x.shape))
        if gain.requires_grad:
            gain._accum(dgain)
        if bias.requires_grad:
            bias._accum(dbias)

    return _make(data, (x, gain, bias), bw)


def embedding(weight, ids):
    """Row gather from an embedding table; scatter-add on backward."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding id out of range for table of {weight.shape[0]} rows")
    data = weight.data[ids]

    def bw(g):
        if weight.requires_grad:
            if weight.grad is None:
                weight.grad = np.zeros_like(weight.data)
            np.add.at(weight.grad, ids.reshape(-1), g.reshape(-1, weight.shape[1]))

    return _make(data, (weight,), bw)


def cross_entropy(logits, targets, mask=None):
    """Summed negative log-likelihood over unmasked positions.

    logits: (N, V); targets: (N,) int ids; mask: optional (N,) bool/0-1,
    True = position counts.  Returns a scalar tensor (sum, not mean).
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (N, V) logits, got {logits.shape}")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} does not match logits rows {n}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id out of range for vocab of size {v}")
    m = np.ones(n, dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype)

    x = logits.data
    xmax = x.max(axis=1, keepdims=True)
    lse = xmax[:, 0] + np.log(np.exp(x - xmax).sum(axis=1))
    nll = lse - x[np.arange(n), targets]
    data = np.asarray((nll * m).sum(), dtype=logits.dtype)

    def bw(g):
        if not logits.requires_grad:
            return
        p = np.exp(x - lse[:, None])
        p[np.arange(n), targets] -= 1.0
        logits._accum(p * (m * float(g))[:, None])

    return _make(data, (logits,), bw)


def concat_rows(tensors):
    """Concatenate along axis 0 (used by batched inference helpers)."""
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accum(g[lo:hi])

    return _make(data, tuple(ts), bw)
