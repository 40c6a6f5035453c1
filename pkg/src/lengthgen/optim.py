"""Parameter storage, global-norm gradient clipping and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericDomainError
from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors, iterated in lexicographic path order."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for path, t in (params or {}).items():
            self.add(path, t)

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise InvalidArgument(f"duplicate parameter path {path!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._params[path] = t
        self._params = dict(sorted(self._params.items()))
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: Tensor(v.data.copy()) for k, v in self._params.items()})

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({k: Tensor(v.data.astype(dtype)) for k, v in self._params.items()})


def clip_global_norm(params: ParameterStore, max_norm: float = 1.0) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the factor applied, ``min(1, max_norm / norm)``.
    """
    sq = 0.0
    for t in params.values():
        if t.grad is not None:
            sq += float(np.dot(t.grad.ravel().astype(np.float64), t.grad.ravel().astype(np.float64)))
    norm = np.sqrt(sq)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for t in params.values():
        if t.grad is not None:
            t.grad *= t.grad.dtype.type(factor)
    return float(factor)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidArgument(f"learning rate must be non-negative, got {self.lr}")


def adam_step(params: ParameterStore, state: AdamState) -> None:
    """One bias-corrected Adam update in place; increments ``state.t``."""
    for path, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericDomainError(f"adam_step: non-finite gradient for parameter {path!r}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for path, p in params.items():
        g = p.grad
        if g is None:
            continue
        if path not in state.m:
            state.m[path] = np.zeros_like(p.data)
            state.v[path] = np.zeros_like(p.data)
        m, v = state.m[path], state.v[path]
        dt = p.data.dtype.type
        m *= dt(b1)
        m += dt(1.0 - b1) * g
        v *= dt(b2)
        v += dt(1.0 - b2) * (g * g)
        step = (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(state.eps))
        p.data -= dt(state.lr) * step
