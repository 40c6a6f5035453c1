"""Encoder-only transformer with pluggable positional encodings.

Pre-layer-norm blocks (norm -> attention -> residual, norm -> MLP -> residual)
followed by a final norm and an affine output head applied at every slot.
Attention is bidirectional. Answers are read from the padded tail slots of
each sequence; the model never decodes autoregressively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import encodings as enc
from .errors import InvalidArgument
from .optim import ParameterStore
from .tensor import (
    Tensor,
    add,
    embedding,
    layer_norm,
    linear,
    masked_cross_entropy,
    matmul,
    mul,
    relu,
    reshape,
    rotate_pairs,
    softmax,
    transpose,
)


@dataclass(frozen=True)
class ModelConfig:
    vocab_in: int
    vocab_out: int
    scheme: enc.EncodingScheme = field(default_factory=enc.EncodingScheme)
    d_model: int = 64
    blocks: int = 5
    heads: int = 8
    mlp_hidden: int | None = None
    learned_rows: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.blocks < 1 or self.heads < 1:
            raise InvalidArgument("blocks and heads must be >= 1")
        if self.d_model % self.heads:
            raise InvalidArgument(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.scheme.base == "rope" and self.head_dim % 2:
            raise InvalidArgument(f"rope needs an even head dimension, got {self.head_dim}")
        if self.scheme.base in ("sincos", "relative") and self.d_model % 2:
            raise InvalidArgument(f"sinusoidal encodings need an even d_model, got {self.d_model}")
        if self.scheme.base == "learned" and self.learned_rows < 1:
            raise InvalidArgument("learned encodings need learned_rows >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def hidden(self) -> int:
        return self.mlp_hidden or 4 * self.d_model

    @property
    def embed_rows(self) -> int:
        return self.vocab_in + 1  # trailing PAD token


@dataclass
class Batch:
    tokens: np.ndarray  # (B, n) int, PAD in answer slots
    mask: np.ndarray  # (B, n) bool, True at answer slots
    targets: np.ndarray  # (B, n) int, 0 outside the mask
    positions: enc.PositionAssignment

    @property
    def size(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def length(self) -> int:
        return int(self.tokens.shape[1])


def make_batch(inputs, outputs, pad_id: int, positions: enc.PositionAssignment) -> Batch:
    """Append ``|y|`` PAD slots to every input row; targets align with those slots."""
    inputs = np.asarray(inputs, dtype=np.int64)
    outputs = np.asarray(outputs, dtype=np.int64)
    b, ell = inputs.shape
    f = outputs.shape[1]
    n = ell + f
    tokens = np.full((b, n), pad_id, dtype=np.int64)
    tokens[:, :ell] = inputs
    mask = np.zeros((b, n), dtype=bool)
    mask[:, ell:] = True
    targets = np.zeros((b, n), dtype=np.int64)
    targets[:, ell:] = outputs
    return Batch(tokens, mask, targets, positions)


# ---------------------------------------------------------------------------
# parameters


def _trunc_normal(rng, shape, std):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    """Truncated-normal (+-2 sigma) weights; sigma = fan_in**-0.5 for projections, 0.02 for embeddings and the output head."""
    d, h, dt = config.d_model, config.hidden, np.dtype(config.dtype)
    p: dict[str, np.ndarray] = {}

    def proj(name, fan_in, fan_out, bias=True):
        p[f"{name}.w"] = _trunc_normal(rng, (fan_in, fan_out), fan_in**-0.5)
        if bias:
            p[f"{name}.b"] = np.zeros(fan_out)

    def norm(name):
        p[f"{name}.gain"] = np.ones(d)
        p[f"{name}.bias"] = np.zeros(d)

    p["embed.tokens"] = _trunc_normal(rng, (config.embed_rows, d), 0.02)
    if config.scheme.base == "learned":
        p["embed.positions"] = _trunc_normal(rng, (config.learned_rows, d), 0.02)
    for i in range(config.blocks):
        pre = f"blocks.{i}"
        norm(f"{pre}.ln1")
        for name in ("q", "k", "v", "o"):
            proj(f"{pre}.attn.{name}", d, d)
        if config.scheme.base == "relative":
            p[f"{pre}.attn.rel.w"] = _trunc_normal(rng, (d, d), d**-0.5)
            p[f"{pre}.attn.rel.u"] = np.zeros((config.heads, 1, config.head_dim))
            p[f"{pre}.attn.rel.v"] = np.zeros((config.heads, 1, config.head_dim))
        norm(f"{pre}.ln2")
        proj(f"{pre}.mlp.fc1", d, h)
        proj(f"{pre}.mlp.fc2", h, d)
    norm("final_ln")
    # small readout so a fresh model predicts near-uniformly
    p["head.w"] = _trunc_normal(rng, (d, config.vocab_out), 0.02)
    p["head.b"] = np.zeros(config.vocab_out)
    return ParameterStore({k: Tensor(v.astype(dt)) for k, v in p.items()})


# ---------------------------------------------------------------------------
# forward


@dataclass
class Capture:
    """Per-layer activations (layer 0 = embeddings) and post-softmax attention."""

    activations: list = field(default_factory=list)  # each (B, n, d)
    attention: list = field(default_factory=list)  # each (B, H, n, n)


class _PositionContext:
    """Position-dependent constants shared by every block of one forward pass."""

    def __init__(self, config: ModelConfig, positions: enc.PositionAssignment):
        dt = np.dtype(config.dtype)
        s = config.scheme
        n = len(positions)
        self.alibi = self.rel = self.cos = self.sin = None
        if s.base == "alibi":
            self.alibi = enc.alibi_bias(positions, config.heads).astype(dt)
        elif s.base == "relative":
            dist = enc.relative_distances(positions)
            self.rel = Tensor(enc.sincos_table(dist, config.d_model, s.sincos_base).reshape(n * n, -1).astype(dt))
        elif s.base == "rope":
            cos, sin = enc.rope_angles(positions, config.head_dim, s.sincos_base)
            self.cos, self.sin = cos.astype(dt), sin.astype(dt)


def _heads(x, b, n, heads, dh):
    return transpose(reshape(x, (b, n, heads, dh)), (0, 2, 1, 3))


def _attention(params, pre, x, config, ctx, capture):
    b, n, d = x.shape
    H, dh = config.heads, config.head_dim
    q = _heads(linear(x, params[f"{pre}.q.w"], params[f"{pre}.q.b"]), b, n, H, dh)
    k = _heads(linear(x, params[f"{pre}.k.w"], params[f"{pre}.k.b"]), b, n, H, dh)
    v = _heads(linear(x, params[f"{pre}.v.w"], params[f"{pre}.v.b"]), b, n, H, dh)
    if ctx.cos is not None:
        q = rotate_pairs(q, ctx.cos, ctx.sin)
        k = rotate_pairs(k, ctx.cos, ctx.sin)
    kt = transpose(k, (0, 1, 3, 2))
    scale = 1.0 / math.sqrt(dh)
    if ctx.rel is not None:
        # content term (q + u) k^T plus position term (q + v) . W_r sincos(i_q - i_k)
        content = matmul(add(q, params[f"{pre}.rel.u"]), kt)
        proj = transpose(reshape(linear(ctx.rel, params[f"{pre}.rel.w"]), (n, n, H, dh)), (2, 0, 3, 1))
        qv = transpose(add(q, params[f"{pre}.rel.v"]), (1, 2, 0, 3))
        position = transpose(matmul(qv, proj), (2, 0, 1, 3))
        scores = mul(add(content, position), scale)
    else:
        scores = mul(matmul(q, kt), scale)
        if ctx.alibi is not None:
            scores = add(scores, ctx.alibi)
    att = softmax(scores)
    if capture is not None:
        capture.attention.append(att.data.copy())
    out = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (b, n, d))
    return linear(out, params[f"{pre}.o.w"], params[f"{pre}.o.b"])


def forward(params: ParameterStore, config: ModelConfig, batch: Batch, capture: bool = False,
            monitor: enc.PositionMonitor | None = None):
    """Logits (B, n, vocab_out); with ``capture=True`` returns ``(logits, Capture)``."""
    tokens = np.asarray(batch.tokens)
    b, n = tokens.shape
    positions = batch.positions
    if len(positions) != n:
        raise InvalidArgument(f"forward: {len(positions)} positions for {n} slots")
    if monitor is not None:
        monitor.observe(positions)
    cap = Capture() if capture else None
    dt = np.dtype(config.dtype)
    scheme = config.scheme

    x = embedding(params["embed.tokens"], tokens)
    if scheme.base == "sincos":
        x = add(x, enc.sincos_table(positions.indices, config.d_model, scheme.sincos_base).astype(dt))
    elif scheme.base == "learned":
        rows = enc.learned_rows(positions, params["embed.positions"].shape[0], monitor)
        x = add(x, embedding(params["embed.positions"], rows))
    if cap is not None:
        cap.activations.append(x.data.copy())

    ctx = _PositionContext(config, positions)
    for i in range(config.blocks):
        pre = f"blocks.{i}"
        h = layer_norm(x, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"])
        x = add(x, _attention(params, f"{pre}.attn", h, config, ctx, cap))
        h = layer_norm(x, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"])
        h = relu(linear(h, params[f"{pre}.mlp.fc1.w"], params[f"{pre}.mlp.fc1.b"]))
        x = add(x, linear(h, params[f"{pre}.mlp.fc2.w"], params[f"{pre}.mlp.fc2.b"]))
        if cap is not None:
            cap.activations.append(x.data.copy())
    x = layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
    logits = linear(x, params["head.w"], params["head.b"])
    return (logits, cap) if capture else logits


def predictions(logits) -> np.ndarray:
    """Argmax class per slot; ties go to the lowest class id."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return data.argmax(axis=-1)


def loss_and_accuracy(logits, batch: Batch):
    """Mean masked cross-entropy (a Tensor) and per-token accuracy over the masked slots."""
    if not batch.mask.any():
        raise InvalidArgument("loss_and_accuracy: batch mask selects no slots")
    loss = masked_cross_entropy(logits, batch.targets, batch.mask)
    correct = predictions(logits)[batch.mask] == batch.targets[batch.mask]
    return loss, float(correct.mean())


def count_correct(logits, batch: Batch) -> tuple[int, int]:
    correct = predictions(logits)[batch.mask] == batch.targets[batch.mask]
    return int(correct.sum()), int(correct.size)
