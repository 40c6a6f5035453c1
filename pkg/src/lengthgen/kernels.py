"""Row-wise numeric kernels used by the autograd core.

Every kernel operates on 2-D C-contiguous arrays (rows x features); callers
reshape. Each kernel has a numba loop version (``*_jit``) and a numpy version
(``*_np``); the public name is bound to one of them according to
``LENGTHGEN_JIT``. Both versions are importable so benchmarks and tests can
compare them directly.
"""
from __future__ import annotations

import math

import numpy as np

from ._jit import JIT_ENABLED, SVML, njit

# ---------------------------------------------------------------------------
# softmax


def softmax_np(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    e /= e.sum(axis=1, keepdims=True)
    return e


def softmax_backward_np(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


@njit
def softmax_jit(x):
    rows, cols = x.shape
    out = np.empty_like(x)
    for r in range(rows):
        m = x[r, 0]
        for c in range(1, cols):
            if x[r, c] > m:
                m = x[r, c]
        s = 0.0
        for c in range(cols):
            e = math.exp(x[r, c] - m)
            out[r, c] = e
            s += e
        inv = 1.0 / s
        for c in range(cols):
            out[r, c] *= inv
    return out


@njit
def softmax_backward_jit(y, g):
    rows, cols = y.shape
    out = np.empty_like(y)
    for r in range(rows):
        dot = 0.0
        for c in range(cols):
            dot += g[r, c] * y[r, c]
        for c in range(cols):
            out[r, c] = y[r, c] * (g[r, c] - dot)
    return out


# ---------------------------------------------------------------------------
# layer normalisation (statistics over the feature axis)


def layer_norm_np(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd[:, 0].astype(x.dtype)


def layer_norm_backward_np(g, xhat, rstd, gain):
    dxhat = g * gain
    cols = xhat.shape[1]
    dx = rstd[:, None] * (
        dxhat
        - dxhat.sum(axis=1, keepdims=True) / cols
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True) / cols
    )
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


@njit
def layer_norm_jit(x, gain, bias, eps):
    rows, cols = x.shape
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows, dtype=x.dtype)
    for r in range(rows):
        mean = 0.0
        for c in range(cols):
            mean += x[r, c]
        mean /= cols
        var = 0.0
        for c in range(cols):
            d = x[r, c] - mean
            var += d * d
        var /= cols
        inv = 1.0 / math.sqrt(var + eps)
        rstd[r] = inv
        for c in range(cols):
            h = (x[r, c] - mean) * inv
            xhat[r, c] = h
            out[r, c] = h * gain[c] + bias[c]
    return out, xhat, rstd


@njit
def layer_norm_backward_jit(g, xhat, rstd, gain):
    rows, cols = g.shape
    dx = np.empty_like(g)
    dgain = np.zeros(cols, dtype=np.float64)
    dbias = np.zeros(cols, dtype=np.float64)
    for r in range(rows):
        s1 = 0.0
        s2 = 0.0
        for c in range(cols):
            d = g[r, c] * gain[c]
            s1 += d
            s2 += d * xhat[r, c]
            dgain[c] += g[r, c] * xhat[r, c]
            dbias[c] += g[r, c]
        s1 /= cols
        s2 /= cols
        for c in range(cols):
            dx[r, c] = rstd[r] * (g[r, c] * gain[c] - s1 - xhat[r, c] * s2)
    return dx, dgain.astype(g.dtype), dbias.astype(g.dtype)


# ---------------------------------------------------------------------------
# cross-entropy over selected rows: returns per-row loss and d(loss_row)/d(logits)


def cross_entropy_np(logits, targets):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = logz - shifted[rows, targets]
    probs = np.exp(shifted - logz[:, None])
    probs[rows, targets] -= 1.0
    return losses, probs


@njit
def cross_entropy_jit(logits, targets):
    rows, cols = logits.shape
    losses = np.empty(rows, dtype=logits.dtype)
    grad = np.empty_like(logits)
    for r in range(rows):
        m = logits[r, 0]
        for c in range(1, cols):
            if logits[r, c] > m:
                m = logits[r, c]
        s = 0.0
        for c in range(cols):
            e = math.exp(logits[r, c] - m)
            grad[r, c] = e
            s += e
        logz = math.log(s)
        t = targets[r]
        losses[r] = logz - (logits[r, t] - m)
        inv = 1.0 / s
        for c in range(cols):
            grad[r, c] *= inv
        grad[r, t] -= 1.0
    return losses, grad


# ---------------------------------------------------------------------------
# partial Fisher-Yates: the first n entries of a shuffle of 1..L
#
# offsets[k] must be uniform on [0, L - k); the swap sequence is pure integer
# arithmetic so both versions return identical draws for identical offsets.


def partial_fisher_yates_np(L, offsets):
    pool = np.arange(1, L + 1, dtype=np.int64)
    for k in range(offsets.shape[0]):
        j = k + int(offsets[k])
        pool[k], pool[j] = pool[j], pool[k]
    return pool[: offsets.shape[0]].copy()


@njit
def partial_fisher_yates_jit(L, offsets):
    pool = np.arange(1, L + 1)
    for k in range(offsets.shape[0]):
        j = k + offsets[k]
        tmp = pool[k]
        pool[k] = pool[j]
        pool[j] = tmp
    return pool[: offsets.shape[0]].copy()


if JIT_ENABLED:
    softmax = softmax_jit if SVML else softmax_np
    softmax_backward = softmax_backward_jit
    layer_norm = layer_norm_jit
    layer_norm_backward = layer_norm_backward_jit
    cross_entropy = cross_entropy_jit
    partial_fisher_yates = partial_fisher_yates_jit
else:
    softmax = softmax_np
    softmax_backward = softmax_backward_np
    layer_norm = layer_norm_np
    layer_norm_backward = layer_norm_backward_np
    cross_entropy = cross_entropy_np
    partial_fisher_yates = partial_fisher_yates_np

__all__ = [
    "softmax",
    "softmax_backward",
    "layer_norm",
    "layer_norm_backward",
    "cross_entropy",
    "partial_fisher_yates",
]
