"""Axis-aligned interval vectors (hyperboxes).

All uncertainty cross-sections and constraint sets in this package are
hyperboxes, so Minkowski sums and Pontryagin differences stay closed-form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyBoxError(ValueError):
    """Raised when a box operation would produce lower > upper."""


@dataclass(frozen=True)
class Hyperbox:
    """Interval vector { x : lower <= x <= upper } (elementwise)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != up.shape or lo.ndim != 1:
            raise ValueError(f"bounds must be 1-d and equal length, got {lo.shape} vs {up.shape}")
        if np.any(lo > up):
            raise EmptyBoxError(f"lower > upper in dimensions {np.nonzero(lo > up)[0].tolist()}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def symmetric(cls, half_width) -> "Hyperbox":
        """Box centered at the origin, { x : |x_i| <= half_width_i }."""
        hw = np.abs(np.atleast_1d(np.asarray(half_width, dtype=float)))
        return cls(-hw, hw)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def slack(self, x) -> float:
        """Smallest distance to a face; negative when x is outside."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lower), np.min(self.upper - x)))

    def __add__(self, other: "Hyperbox") -> "Hyperbox":
        """Minkowski sum; half-widths add."""
        return Hyperbox(self.lower + other.lower, self.upper + other.upper)

    def __sub__(self, other: "Hyperbox") -> "Hyperbox":
        """Pontryagin difference { z : z + other ⊆ self } (exact for boxes)."""
        return Hyperbox(self.lower - other.lower, self.upper - other.upper)

    def shrink(self, margin) -> "Hyperbox":
        """Erode every face inward by a per-dimension (or scalar) margin."""
        m = np.broadcast_to(np.asarray(margin, dtype=float), self.lower.shape)
        return Hyperbox(self.lower + m, self.upper - m)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n uniform samples, shape (n, dim)."""
        return self.lower + rng.random((n, self.dim)) * (self.upper - self.lower)

    def corners(self) -> np.ndarray:
        """All 2^dim corner points, shape (2^dim, dim)."""
        d = self.dim
        idx = (np.arange(2**d)[:, None] >> np.arange(d)) & 1
        return np.where(idx == 1, self.upper, self.lower)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Hyperbox)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )
