"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record their parents and a closure mapping the output gradient to
parent gradients; :func:`backward` walks the recorded graph in reverse
topological order. Only leaves (parameters, inputs created by the user)
keep a ``.grad`` after the pass.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import kernels
from .errors import InvalidArgument, NumericDomainError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None

    # -- introspection ----------------------------------------------------
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

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def backward(self):
        backward(self)


# ---------------------------------------------------------------------------
# graph helpers


def _const(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = backward_fn
    return out


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


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidArgument(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _check_finite(x, op):
    # one reduction on the fast path; the elementwise test only runs on failure
    if not np.isfinite(x.sum()) and not np.isfinite(x).all():
        raise NumericDomainError(f"{op}: input contains non-finite values")


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate: call ``ParameterStore.zero_grad`` between steps.
    """
    if loss.size != 1:
        raise InvalidArgument(f"backward: loss must be scalar, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._prev, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b):
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        s = float(b)
        return _node(a.data * a.data.dtype.type(s), (a,), lambda g: (g * g.dtype.type(s),))
    a = _const(a, b if isinstance(b, Tensor) else None)
    b = _const(b, a)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def matmul(a, b):
    """Batched matrix product over the last two axes, numpy broadcasting on the rest."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InvalidArgument(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return _node(ad @ bd, (a, b), bw)


def linear(x, w, b=None):
    """``x @ w + b`` over the last axis of ``x``; ``w`` is (in, out)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise InvalidArgument(f"linear: input shape {x.shape} incompatible with weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out.reshape(*lead, w.shape[1]), parents, bw)


def reshape(x, shape):
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise InvalidArgument(f"reshape: cannot reshape {src} into {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(src),))


def transpose(x, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise InvalidArgument(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def relu(x):
    d = x.data
    return _node(np.maximum(d, 0), (x,), lambda g: (g * (d > 0),))


def sum_all(x):
    shape = x.shape
    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x):
    shape, n = x.shape, x.size
    return _node(
        np.asarray(x.data.mean(), dtype=x.dtype),
        (x,),
        lambda g: (np.broadcast_to(g / n, shape).astype(x.dtype),),
    )


# ---------------------------------------------------------------------------
# neural-network ops


def softmax(x):
    """Softmax over the last axis (max-subtracted)."""
    _check_finite(x.data, "softmax")
    shape = x.shape
    y = kernels.softmax(np.ascontiguousarray(x.data.reshape(-1, shape[-1])))

    def bw(g):
        return (kernels.softmax_backward(y, np.ascontiguousarray(g.reshape(y.shape))).reshape(shape),)

    return _node(y.reshape(shape), (x,), bw)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise each feature vector (last axis) to zero mean and unit variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise InvalidArgument(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match features {d}")
    shape = x.shape
    out, xhat, rstd = kernels.layer_norm(
        np.ascontiguousarray(x.data.reshape(-1, d)), gain.data, bias.data, eps
    )

    def bw(g):
        dx, dgain, dbias = kernels.layer_norm_backward(
            np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, gain.data
        )
        return dx.reshape(shape), dgain, dbias

    return _node(out.reshape(shape), (x, gain, bias), bw)


def embedding(table, ids):
    """Row lookup ``table[ids]``; ids is an integer array of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InvalidArgument(
            f"embedding: ids in [{ids.min()}, {ids.max()}] outside table of {table.shape[0]} rows"
        )
    flat = ids.reshape(-1)

    def bw(g):
        # one-hot scatter as a matmul; much faster than np.add.at
        onehot = np.zeros((table.shape[0], flat.size), dtype=g.dtype)
        onehot[flat, np.arange(flat.size)] = 1
        return (onehot @ g.reshape(flat.size, -1),)

    return _node(table.data[ids], (table,), bw)


def rotate_pairs(x, cos, sin):
    """Rotate consecutive feature pairs (2p, 2p+1) of ``x`` by angles given as cos/sin.

    ``cos`` and ``sin`` have shape (..., d/2) broadcastable against ``x[..., ::2]``.
    """
    if x.shape[-1] % 2:
        raise InvalidArgument(f"rotate_pairs: feature axis {x.shape[-1]} must be even")
    cos = np.asarray(cos, dtype=x.dtype)
    sin = np.asarray(sin, dtype=x.dtype)
    d = x.data
    out = np.empty_like(d)
    x0, x1 = d[..., 0::2], d[..., 1::2]
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos

    def bw(g):
        gx = np.empty_like(g)
        g0, g1 = g[..., 0::2], g[..., 1::2]
        gx[..., 0::2] = g0 * cos + g1 * sin
        gx[..., 1::2] = g1 * cos - g0 * sin
        return (gx,)

    return _node(out, (x,), bw)


def masked_cross_entropy(logits, targets, mask):
    """Mean cross-entropy over the slots where ``mask`` is true.

    ``logits`` is (..., V); ``targets`` and ``mask`` share the leading shape.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != logits.shape[:-1] or mask.shape != logits.shape[:-1]:
        raise InvalidArgument(
            f"masked_cross_entropy: logits {logits.shape} vs targets {targets.shape} / mask {mask.shape}"
        )
    count = int(mask.sum())
    if count == 0:
        raise InvalidArgument("masked_cross_entropy: mask selects no slots")
    v = logits.shape[-1]
    flat_mask = mask.reshape(-1)
    sel = np.ascontiguousarray(logits.data.reshape(-1, v)[flat_mask])
    _check_finite(sel, "masked_cross_entropy")
    tsel = targets.reshape(-1)[flat_mask].astype(np.int64)
    if tsel.min() < 0 or tsel.max() >= v:
        raise InvalidArgument(f"masked_cross_entropy: targets outside [0, {v})")
    losses, grad = kernels.cross_entropy(sel, tsel)
    loss = np.asarray(losses.astype(np.float64).mean(), dtype=logits.dtype)

    def bw(g):
        full = np.zeros((flat_mask.size, v), dtype=logits.dtype)
        full[flat_mask] = grad * (g / count)
        return (full.reshape(logits.shape),)

    return _node(loss, (logits,), bw)
