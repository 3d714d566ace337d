"""Discrete distribution functions on {1..K} and their inversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericalDegeneracyError

CDF_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SteppedCDF:
    """Nondecreasing values ``F(1) <= ... <= F(K) = 1`` on labels ``1..K``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return len(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, label):
        """``F(label)`` for 1-based ``label``; 0 below the support."""
        if label < 1:
            return 0.0
        if label > len(self.values):
            return 1.0
        return float(self.values[label - 1])

    def __eq__(self, other):
        return isinstance(other, SteppedCDF) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    def pmf(self) -> np.ndarray:
        return np.diff(self.values, prepend=0.0)

    def invert(self, u: float) -> int:
        return invert(self, u)

    def is_valid(self, tol: float = CDF_TOL) -> bool:
        v = self.values
        return bool(
            len(v) >= 1
            and np.all(np.isfinite(v))
            and np.all(v >= -tol)
            and np.all(v <= 1 + tol)
            and np.all(np.diff(v) >= -tol)
            and abs(v[-1] - 1.0) <= tol
        )

    def padded(self, size: int) -> "SteppedCDF":
        """Same distribution viewed on ``1..size`` (extra labels carry no mass)."""
        if size < len(self.values):
            raise InvalidArgumentError("cannot pad to a smaller support")
        return SteppedCDF(np.concatenate([self.values, np.ones(size - len(self.values))]))

    @classmethod
    def from_weights(cls, weights) -> "SteppedCDF":
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0 or not np.isfinite(total):
            raise NumericalDegeneracyError("weights have no positive finite mass")
        c = np.cumsum(w) / total
        c[-1] = 1.0
        return cls(np.minimum(c, 1.0))

    @classmethod
    def from_log_weights(cls, log_weights) -> "SteppedCDF":
        lw = np.asarray(log_weights, dtype=float)
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise NumericalDegeneracyError("log weights contain NaN or +inf")
        top = lw.max()
        if top == -np.inf:
            raise NumericalDegeneracyError("all weights underflow to zero")
        return cls.from_weights(np.exp(lw - top))

    @classmethod
    def point_mass(cls, label: int, size: int) -> "SteppedCDF":
        v = np.zeros(size)
        v[label - 1 :] = 1.0
        return cls(v)


def invert(cdf: SteppedCDF, u: float) -> int:
    """Smallest label ``k`` with ``F(k) >= u`` (1-based)."""
    k = int(np.searchsorted(cdf.values, u, side="left"))
    return min(k, len(cdf.values) - 1) + 1


@dataclass(frozen=True)
class BoundPair:
    """Envelope pair with ``lower(k) <= upper(k)`` for every label."""

    lower: SteppedCDF
    upper: SteppedCDF

    def is_valid(self, tol: float = CDF_TOL) -> bool:
        return (
            self.lower.is_valid(tol)
            and self.upper.is_valid(tol)
            and len(self.lower) == len(self.upper)
            and bool(np.all(self.lower.values <= self.upper.values + tol))
        )

    def invert(self, u: float) -> tuple[int, int]:
        """Sandwiching labels ``(low, high)``: ``low`` from the upper envelope."""
        return invert(self.upper, u), invert(self.lower, u)

    @property
    def gap(self) -> np.ndarray:
        return self.upper.values - self.lower.values


def repair_envelopes(lower_raw, upper_raw) -> BoundPair:
    """Turn raw per-label extrema into valid envelopes by loosening only.

    The lower envelope becomes the running minimum taken from the right, the
    upper envelope the running maximum from the left; both end at 1.
    """
    lo = np.clip(np.asarray(lower_raw, dtype=float), 0.0, 1.0)
    hi = np.clip(np.asarray(upper_raw, dtype=float), 0.0, 1.0)
    lo[-1] = 1.0
    hi[-1] = 1.0
    lo = np.minimum.accumulate(lo[::-1])[::-1]
    hi = np.maximum.accumulate(hi)
    lo = np.minimum(lo, hi)
    return BoundPair(SteppedCDF(lo), SteppedCDF(hi))
