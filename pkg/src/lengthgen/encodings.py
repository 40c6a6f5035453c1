"""Positional encodings and their randomized variants.

Six base schemes are supported: ``none``, ``sincos``, ``learned`` (added to
the token embeddings before the first block) and ``relative``, ``alibi``,
``rope`` (applied inside every attention layer).

Standard schemes use positions ``1..n``. Randomized schemes draw, once per
batch, a uniformly random ``n``-subset of ``{1..L}`` and (by default) sort it;
every position-dependent quantity is then computed from the sampled indices
instead of ``1..n``. With ``L == n`` the only subset is ``1..n`` so each
randomized scheme reduces exactly to its standard counterpart.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgument

log = logging.getLogger(__name__)

BASES = ("none", "sincos", "learned", "relative", "alibi", "rope")
ADDITIVE = ("sincos", "learned")
ATTENTION_LEVEL = ("relative", "alibi", "rope")


@dataclass(frozen=True)
class EncodingScheme:
    base: str = "none"
    randomized: bool = False
    max_position: int = 2048
    sort_sampled: bool = True
    sincos_base: float = 10000.0

    def __post_init__(self):
        if self.base not in BASES:
            raise InvalidArgument(f"unknown encoding base {self.base!r}; expected one of {BASES}")
        if self.max_position < 1:
            raise InvalidArgument(f"max_position must be positive, got {self.max_position}")
        if self.sincos_base <= 0:
            raise InvalidArgument("sincos_base must be positive")

    @property
    def name(self) -> str:
        parts = [self.base]
        if self.randomized:
            parts.append("rand")
        if not self.sort_sampled:
            parts.append("unsorted")
        return "+".join(parts)

    def __str__(self):
        return self.name

    def with_max_position(self, L: int) -> "EncodingScheme":
        return EncodingScheme(self.base, self.randomized, L, self.sort_sampled, self.sincos_base)


def parse_scheme(text: str, max_position: int = 2048) -> EncodingScheme:
    """Parse ``<base>[+rand][+unsorted]`` (e.g. ``relative+rand``, ``sincos+rand+unsorted``)."""
    parts = [p.strip() for p in text.strip().split("+")]
    base, flags = parts[0], parts[1:]
    unknown = set(flags) - {"rand", "unsorted"}
    if unknown or len(set(flags)) != len(flags):
        raise InvalidArgument(f"bad scheme {text!r}: flags must be a subset of '+rand', '+unsorted'")
    if "unsorted" in flags and "rand" not in flags:
        raise InvalidArgument(f"bad scheme {text!r}: '+unsorted' only applies to randomized schemes")
    return EncodingScheme(base, "rand" in flags, max_position, "unsorted" not in flags)


@dataclass(frozen=True)
class PositionAssignment:
    """Position indices (1-based) given to the ``n`` slots of every sequence in a batch."""

    indices: np.ndarray
    sorted: bool = True

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return int(self.indices.shape[0])


def standard_positions(n: int) -> PositionAssignment:
    return PositionAssignment(np.arange(1, n + 1))


def sample_positions(n: int, scheme: EncodingScheme, rng: np.random.Generator) -> PositionAssignment:
    """Positions for one batch of padded length ``n``.

    Randomized schemes: a uniformly random ``n``-subset of ``{1..L}`` via a
    partial Fisher-Yates shuffle, sorted ascending unless the scheme disables it.
    Standard schemes ignore ``rng`` and return ``1..n``.
    """
    if n < 1:
        raise InvalidArgument(f"sample_positions: n must be positive, got {n}")
    if not scheme.randomized or scheme.base == "none":
        return standard_positions(n)
    L = scheme.max_position
    if n > L:
        raise InvalidArgument(f"sample_positions: n={n} exceeds max_position L={L}")
    offsets = rng.integers(0, L - np.arange(n, dtype=np.int64))
    idx = kernels.partial_fisher_yates(L, offsets.astype(np.int64))
    if scheme.sort_sampled:
        idx = np.sort(idx)
    return PositionAssignment(idx, scheme.sort_sampled)


# ---------------------------------------------------------------------------
# sinusoids


def sincos_table(positions, d_model: int, base: float = 10000.0) -> np.ndarray:
    """Rows ``PE(pos)`` for each entry of ``positions`` (any integer array shape).

    Feature pair ``(2i, 2i+1)`` holds ``sin/cos(pos / base**(2i/d_model))`` with
    ``i`` counted from 0, so the first pair has frequency 1.
    """
    if d_model % 2:
        raise InvalidArgument(f"sincos: d_model must be even, got {d_model}")
    pos = np.asarray(positions, dtype=np.float64)
    inv_freq = base ** (-np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    angles = pos[..., None] * inv_freq
    out = np.empty(pos.shape + (d_model,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def sincos(pos: int, d_model: int, base: float = 10000.0) -> np.ndarray:
    return sincos_table(np.asarray(pos), d_model, base)


# ---------------------------------------------------------------------------
# additive schemes


@dataclass
class OutOfRangeEvent:
    requested: int
    table_rows: int


@dataclass
class PositionMonitor:
    """Records every position index consumed, and learned-table overflows."""

    min_index: int | None = None
    max_index: int | None = None
    events: list = field(default_factory=list)
    _warned: bool = False

    def observe(self, positions: PositionAssignment) -> None:
        lo, hi = int(positions.indices.min()), int(positions.indices.max())
        self.min_index = lo if self.min_index is None else min(self.min_index, lo)
        self.max_index = hi if self.max_index is None else max(self.max_index, hi)

    def report_overflow(self, requested: int, rows: int) -> None:
        self.events.append(OutOfRangeEvent(requested, rows))
        if not self._warned:
            log.warning(
                "learned position %d beyond table of %d rows; clamping to the last row", requested, rows
            )
            self._warned = True

    @property
    def out_of_range(self) -> bool:
        return bool(self.events)


def learned_rows(positions: PositionAssignment, table_rows: int, monitor: PositionMonitor | None = None):
    """Table row ids for ``positions`` (position ``i`` reads row ``i-1``).

    Indices past the table are clamped to the last row and reported to
    ``monitor`` (or logged) rather than raised, so that standard learned
    encodings can still be scored beyond their training length.
    """
    rows = positions.indices - 1
    over = rows >= table_rows
    if over.any():
        requested = int(positions.indices.max())
        if monitor is not None:
            monitor.report_overflow(requested, table_rows)
        else:
            log.warning("learned position %d beyond table of %d rows; clamping", requested, table_rows)
        rows = np.minimum(rows, table_rows - 1)
    return rows


def encode_additive(scheme: EncodingScheme, positions: PositionAssignment, d_model: int,
                    table=None, monitor: PositionMonitor | None = None) -> np.ndarray:
    """The (n, d_model) matrix added to the token embeddings."""
    if scheme.base == "sincos":
        return sincos_table(positions.indices, d_model, scheme.sincos_base)
    if scheme.base == "learned":
        if table is None:
            raise InvalidArgument("encode_additive: learned scheme requires an embedding table")
        table = np.asarray(table)
        return table[learned_rows(positions, table.shape[0], monitor)]
    raise InvalidArgument(f"encode_additive: scheme {scheme.base!r} is not additive")


def learned_table_rows(scheme: EncodingScheme, max_train_positions: int) -> int:
    """Rows in a learned table: ``L`` when randomized, else the longest padded training length."""
    return scheme.max_position if scheme.randomized else max_train_positions


# ---------------------------------------------------------------------------
# attention-level schemes


def relative_distances(positions: PositionAssignment) -> np.ndarray:
    """Matrix of ``i_q - i_k`` (query row, key column)."""
    idx = positions.indices
    return idx[:, None] - idx[None, :]


def alibi_slopes(heads: int) -> np.ndarray:
    """Geometric head slopes ``2**(-8h/H)`` for ``h = 1..H``."""
    if heads < 1:
        raise InvalidArgument(f"alibi: heads must be >= 1, got {heads}")
    h = np.arange(1, heads + 1, dtype=np.float64)
    return 2.0 ** (-8.0 * h / heads)


def alibi_bias(positions: PositionAssignment, heads: int) -> np.ndarray:
    """(H, n, n) additive attention bias ``-m_h * |i_q - i_k|`` (symmetric, non-causal)."""
    dist = np.abs(relative_distances(positions)).astype(np.float64)
    return -alibi_slopes(heads)[:, None, None] * dist[None]


def rope_angles(positions: PositionAssignment, head_dim: int, base: float = 10000.0):
    """cos and sin of ``i_j * theta_p`` with ``theta_p = base**(-2p/head_dim)``; shape (n, head_dim/2)."""
    if head_dim % 2:
        raise InvalidArgument(f"rope: head dimension must be even, got {head_dim}")
    theta = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    ang = positions.indices.astype(np.float64)[:, None] * theta
    return np.cos(ang), np.sin(ang)


def rope_rotate(x, positions: PositionAssignment, base: float = 10000.0) -> np.ndarray:
    """Rotate each feature pair of ``x[..., j, :]`` by angle ``i_j * theta_p``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise InvalidArgument(f"rope: head dimension must be even, got {x.shape[-1]}")
    if x.shape[-2] != len(positions):
        raise InvalidArgument(f"rope: {x.shape[-2]} slots but {len(positions)} positions")
    cos, sin = rope_angles(positions, x.shape[-1], base)
    out = np.empty_like(x)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out
