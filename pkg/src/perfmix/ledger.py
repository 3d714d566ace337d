"""Replayable uniform random numbers addressed by (time, variable, draw index).

Coupling from the past replays the same time steps many times over, with
epochs growing backwards.  Every uniform used by the samplers is therefore a
pure function of ``(seed, t, kind, index, idx)``: a keyed BLAKE2b digest of the
packed address, mapped to the open interval (0, 1).  Cells can be read in any
order, by any number of chains or processes, and always give the same bits.

Cell addressing (documented so other implementations can cross-check)::

    message = struct.pack("<qqqq", t, kind, index, idx)
    word    = uint64_le(blake2b(message, key=uint64_le(seed), digest_size=8))
    u       = ((word >> 11) + 0.5) / 2**53
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import UsageError

_PACK = struct.Struct("<qqqq").pack
_SCALE = 1.0 / 9007199254740992.0  # 2**-53


class Kind(enum.IntEnum):
    Z = 1
    C = 2
    S = 3
    PI = 4
    THETA = 5
    THETA_STAR = 6
    ALPHA = 7
    ANNEAL = 8
    REJECTION = 9
    AUX = 10
    REPAIR = 11


@dataclass(frozen=True)
class VariableId:
    kind: Kind
    index: int = 0


def _word(key: bytes, t: int, kind: int, index: int, idx: int) -> int:
    digest = hashlib.blake2b(_PACK(t, kind, index, idx), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def cell_value(seed: int, t: int, kind: int, index: int, idx: int) -> float:
    """Reference value of one ledger cell, with no epoch bookkeeping."""
    key = int(seed).to_bytes(8, "little")
    return ((_word(key, t, kind, index, idx) >> 11) + 0.5) * _SCALE


@dataclass(frozen=True)
class RandomLedger:
    """Immutable view of the uniforms for times ``-2**epoch + 1 .. 0``.

    ``epoch`` 0 exposes only ``t = 0``; :meth:`extend_epoch` returns a new
    ledger one epoch deeper.  Old cells keep their values by construction.
    """

    seed: int
    epoch: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError(f"seed must fit in 64 bits, got {self.seed}")
        object.__setattr__(self, "_key", int(self.seed).to_bytes(8, "little"))

    @property
    def earliest(self) -> int:
        return -(2**self.epoch) + 1

    def extend_epoch(self, j: int) -> "RandomLedger":
        if j != self.epoch + 1:
            raise UsageError(f"epoch must grow by one: at {self.epoch}, asked for {j}")
        return RandomLedger(self.seed, j)

    def at_epoch(self, j: int) -> "RandomLedger":
        """Ledger materialized through epoch ``j`` (cells are identical)."""
        if j < 0:
            raise UsageError("negative epoch")
        return RandomLedger(self.seed, j)

    def epoch_times(self, j: int) -> range:
        """Times first exposed by epoch ``j``: {-1, 0} for j=1."""
        if j < 1:
            raise UsageError("epochs start at 1")
        if j == 1:
            return range(-1, 1)
        return range(-(2**j) + 1, -(2 ** (j - 1)) + 1)

    def _check(self, t: int) -> None:
        if t > 0 or t < self.earliest:
            raise UsageError(
                f"time {t} outside materialized range [{self.earliest}, 0] (epoch {self.epoch})"
            )

    def uniform(self, t: int, var: VariableId | Kind, idx: int = 0, index: int | None = None) -> float:
        if isinstance(var, VariableId):
            kind, index = int(var.kind), var.index
        else:
            kind, index = int(var), (0 if index is None else index)
        self._check(t)
        return ((_word(self._key, t, kind, index, idx) >> 11) + 0.5) * _SCALE

    def uniforms(self, t: int, kind: Kind, index: int, start: int, count: int) -> np.ndarray:
        self._check(t)
        key = self._key
        return np.fromiter(
            (((_word(key, t, kind, index, k) >> 11) + 0.5) * _SCALE for k in range(start, start + count)),
            dtype=float,
            count=count,
        )

    def across(self, t: int, kind: Kind, count: int, idx: int = 0) -> np.ndarray:
        """Cell ``idx`` of variables ``(kind, 0..count-1)`` at time ``t``."""
        self._check(t)
        key, k = self._key, int(kind)
        return np.fromiter(
            (((_word(key, t, k, i, idx) >> 11) + 0.5) * _SCALE for i in range(count)),
            dtype=float,
            count=count,
        )

    def stream(self, t: int, kind: Kind, index: int = 0, start: int = 0) -> "Stream":
        self._check(t)
        return Stream(self, t, int(kind), index, start)


class Stream:
    """Sequential reader over one (t, kind, index) cell row.

    Rejection samplers consume cells ``start, start+1, ...`` in order; the row
    is unbounded.
    """

    __slots__ = ("_key", "t", "kind", "index", "position")

    def __init__(self, ledger: RandomLedger, t: int, kind: int, index: int, start: int = 0):
        self._key = ledger._key
        self.t = t
        self.kind = kind
        self.index = index
        self.position = start

    def next(self) -> float:
        w = _word(self._key, self.t, self.kind, self.index, self.position)
        self.position += 1
        return ((w >> 11) + 0.5) * _SCALE

    def take(self, count: int) -> np.ndarray:
        return np.array([self.next() for _ in range(count)])
