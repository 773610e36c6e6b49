"""Small shared numeric helpers."""

from __future__ import annotations

import math

import numpy as np

# Slack added before flooring so that counts like 0.3 * 3000, which lands at
# 899.9999999999999 in floating point, floor to the intended integer.
_FLOOR_GUARD = 1e-9


def floor_count(x: float) -> int:
    """Floor a nonnegative float to an integer count, guarding fp dust."""
    return int(math.floor(x + _FLOOR_GUARD))


def ceil_count(x: float) -> int:
    """Ceil a nonnegative float to an integer count, guarding fp dust."""
    return int(math.ceil(x - _FLOOR_GUARD))


def fmt17(x: float) -> str:
    """Format a float with 17 significant digits (round-trips IEEE doubles)."""
    return format(float(x), ".17g")


def as_readonly(a: np.ndarray) -> np.ndarray:
    """Return a C-contiguous copy flagged read-only."""
    out = np.ascontiguousarray(a)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


def check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
