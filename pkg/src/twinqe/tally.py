"""Mergeable click tallies.

Clicks are binary, so the four cell counts (no click, signal only, idler
only, both) are a sufficient statistic: every moment of ``N_s``, ``N_i`` and
any linear combination follows from them. Sums are Python integers, so
merging is exact, associative and commutative.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError

#: Largest pulse count a record file header can describe.
MAX_PULSES = 2**63 - 1


class PulseRecord(NamedTuple):
    click_signal: int
    click_idler: int


@dataclass
class TallyStats:
    n_pulses: int = 0
    sum_s: int = 0
    sum_i: int = 0
    sum_coinc: int = 0

    def __post_init__(self):
        for name in ("n_pulses", "sum_s", "sum_i", "sum_coinc"):
            v = getattr(self, name)
            if isinstance(v, (bool, float)) or int(v) != v or v < 0:
                raise DomainError(f"{name} must be a non-negative integer, got {v!r}")
            setattr(self, name, int(v))
        if self.sum_s > self.n_pulses or self.sum_i > self.n_pulses:
            raise DomainError("click sums cannot exceed the pulse count")
        if self.sum_coinc > min(self.sum_s, self.sum_i):
            raise DomainError("coincidences cannot exceed either arm's clicks")
        if self.n_pulses - self.sum_s - self.sum_i + self.sum_coinc < 0:
            raise DomainError("inconsistent sums: negative no-click count")

    # second moments of binary clicks coincide with the first
    @property
    def sum_ss(self) -> int:
        return self.sum_s

    @property
    def sum_ii(self) -> int:
        return self.sum_i

    @property
    def sum_si(self) -> int:
        return self.sum_coinc

    def cells(self) -> tuple[int, int, int, int]:
        """Counts of (no click, signal only, idler only, both)."""
        c = self.sum_coinc
        return (self.n_pulses - self.sum_s - self.sum_i + c, self.sum_s - c, self.sum_i - c, c)

    @classmethod
    def from_cells(cls, n00, n10, n01, n11) -> "TallyStats":
        n00, n10, n01, n11 = (int(x) for x in (n00, n10, n01, n11))
        return cls(n00 + n10 + n01 + n11, n10 + n11, n01 + n11, n11)

    @classmethod
    def from_clicks(cls, clicks_s, clicks_i) -> "TallyStats":
        cs = np.asarray(clicks_s, dtype=bool)
        ci = np.asarray(clicks_i, dtype=bool)
        if cs.shape != ci.shape:
            raise ValueError("click arrays differ in length")
        return cls(cs.size, int(np.count_nonzero(cs)), int(np.count_nonzero(ci)), int(np.count_nonzero(cs & ci)))

    def add(self, record) -> "TallyStats":
        s, i = int(record[0]), int(record[1])
        if s not in (0, 1) or i not in (0, 1):
            raise DomainError(f"clicks must be 0 or 1, got {tuple(record)!r}")
        if self.n_pulses >= MAX_PULSES:
            raise OverflowError("pulse count limit reached")
        self.n_pulses += 1
        self.sum_s += s
        self.sum_i += i
        self.sum_coinc += s & i
        return self

    def merge(self, other: "TallyStats") -> "TallyStats":
        n = self.n_pulses + other.n_pulses
        if n > MAX_PULSES:
            raise OverflowError("pulse count limit reached")
        return TallyStats(n, self.sum_s + other.sum_s, self.sum_i + other.sum_i, self.sum_coinc + other.sum_coinc)

    __add__ = merge

    def swapped(self) -> "TallyStats":
        """The same tally with the signal and idler arms exchanged."""
        return TallyStats(self.n_pulses, self.sum_i, self.sum_s, self.sum_coinc)

    def rates(self) -> tuple[float, float, float]:
        """Per-pulse means <N_s>, <N_i>, <N_c>."""
        if self.n_pulses == 0:
            return 0.0, 0.0, 0.0
        n = self.n_pulses
        return self.sum_s / n, self.sum_i / n, self.sum_coinc / n


def accumulate(tally: TallyStats, record) -> TallyStats:
    """Add one pulse record to ``tally`` in place and return it."""
    return tally.add(record)


def merge(*tallies: TallyStats) -> TallyStats:
    out = TallyStats()
    for t in tallies:
        out = out.merge(t)
    return out
