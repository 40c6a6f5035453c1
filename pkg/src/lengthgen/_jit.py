"""Numba switch.

Hot kernels are written twice: an explicit-loop version compiled with
``numba.njit`` and a vectorised numpy version. ``LENGTHGEN_JIT=0`` (or a
missing numba install) selects the numpy path everywhere.
"""
from __future__ import annotations

import logging
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a soft dependency
    numba = None


def _flag(value: str | None) -> bool:
    if value is None:
        return True
    return value.strip().lower() not in {"0", "false", "no", "off", ""}


JIT_AVAILABLE = numba is not None
JIT_ENABLED = JIT_AVAILABLE and _flag(os.environ.get("LENGTHGEN_JIT"))
# without SVML numba's exp is a scalar libm call, slower than numpy's SIMD loop
SVML = JIT_AVAILABLE and bool(getattr(numba.config, "USING_SVML", False))

if JIT_AVAILABLE:
    logging.getLogger("numba").setLevel(logging.WARNING)


def njit(func):
    """Compile ``func`` in nopython mode when numba is importable, else return it unchanged."""
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)
