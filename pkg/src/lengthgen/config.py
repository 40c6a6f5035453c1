"""Run configuration and its flat ``key = value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import InvalidArgument

LEARNING_RATES = (1e-4, 3e-4, 5e-4)


@dataclass(frozen=True)
class TrainConfig:
    """One training run. Defaults are the desk-scale setting; see :meth:`paper_scale`."""

    task: str = "reverse_string"
    scheme: str = "relative+rand"
    n_train: int = 20
    m_eval: int = 100
    max_position: int = 512
    steps: int = 20_000
    batch_size: int = 64
    lr: float = 3e-4
    seed: int = 0
    d_model: int = 32
    blocks: int = 2
    heads: int = 8
    eval_batch: int = 500
    max_norm: float = 1.0
    log_every: int = 100

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        base = dict(n_train=40, m_eval=500, max_position=2048, steps=2_000_000, batch_size=128,
                    d_model=64, blocks=5, heads=8)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return to_text(self)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return from_text(cls, text)


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return str(value)


def to_text(obj) -> str:
    return "".join(f"{f.name} = {_format(getattr(obj, f.name))}\n" for f in fields(obj))


def _coerce(kind, raw: str, name: str):
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(kind, str) and kind.startswith("tuple[int"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(kind, str) and kind.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if isinstance(kind, str) and kind.startswith("tuple[str"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise InvalidArgument(f"config key {name!r}: cannot parse {raw!r} as {kind}") from None


def parse_pairs(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def from_pairs(cls, pairs: dict[str, str], base=None):
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(pairs) - set(known)
    if unknown:
        raise InvalidArgument(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {k: _coerce(known[k], v, k) for k, v in pairs.items()}
    if base is None:
        return cls(**values)
    return dataclasses.replace(base, **values)


def from_text(cls, text: str, base=None):
    return from_pairs(cls, parse_pairs(text), base)
