"""Weighted Misra-Gries frequency summary.

Counters hold real-valued weights.  When an insertion leaves more than
``capacity`` positive counters, the smallest counter value is subtracted
from every counter and the zeros are evicted.  This handles fractional
weights in one step instead of replaying ``ceil(w)`` unit insertions.

For every element ``e`` the summary guarantees::

    0 <= f_e - estimate(e) <= processed_weight / capacity
"""
from __future__ import annotations

import heapq
import math
from collections.abc import Hashable, Iterable, Mapping


def _check_weight(w: float) -> float:
    w = float(w)
    if not math.isfinite(w) or w <= 0.0:
        raise ValueError(f"weight must be positive and finite, got {w!r}")
    return w


class WeightedMG:
    """Misra-Gries summary over weighted items.

    Args:
        capacity: number of counters ``l``; the additive error is at most
            ``processed_weight / capacity``.
        slack: merges may leave up to ``slack * capacity`` counters before
            cutting back to ``capacity``.  Each cut subtracts the
            ``(capacity+1)``-th largest value from at least ``capacity+1``
            counters, so the error bound is unchanged while the cut cost is
            amortized over many small merges.
    """

    __slots__ = ("capacity", "counters", "processed_weight", "slack")

    def __init__(self, capacity: int, slack: float = 1.0):
        if int(capacity) != capacity or capacity < 1:
            raise ValueError(f"capacity must be a positive integer, got {capacity!r}")
        if not slack >= 1.0:
            raise ValueError(f"slack must be at least 1, got {slack!r}")
        self.capacity = int(capacity)
        self.slack = float(slack)
        self.counters: dict[Hashable, float] = {}
        self.processed_weight = 0.0

    @classmethod
    def for_error(cls, eps: float) -> "WeightedMG":
        """Summary whose error is at most ``eps`` times the processed weight."""
        if not 0.0 < eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {eps!r}")
        return cls(math.ceil(1.0 / eps - 1e-9))

    def __len__(self) -> int:
        return len(self.counters)

    def __contains__(self, e: Hashable) -> bool:
        return e in self.counters

    def __repr__(self) -> str:
        return (
            f"WeightedMG(capacity={self.capacity}, counters={len(self.counters)}, "
            f"W={self.processed_weight:g})"
        )

    def copy(self) -> "WeightedMG":
        out = WeightedMG(self.capacity, self.slack)
        out.counters = dict(self.counters)
        out.processed_weight = self.processed_weight
        return out

    def clear(self) -> None:
        self.counters.clear()
        self.processed_weight = 0.0

    def items(self):
        return self.counters.items()

    def update(self, e: Hashable, w: float = 1.0) -> "WeightedMG":
        w = _check_weight(w)
        self.processed_weight += w
        counters = self.counters
        counters[e] = counters.get(e, 0.0) + w
        if len(counters) > self.capacity:
            delta = min(counters.values())
            self.counters = {k: v - delta for k, v in counters.items() if v > delta}
        return self

    def estimate(self, e: Hashable) -> float:
        return self.counters.get(e, 0.0)

    def merge(self, other: "WeightedMG", capacity: int | None = None) -> "WeightedMG":
        """Fold ``other`` into this summary in place.

        Counters are added pointwise; on overflow the ``(capacity+1)``-th
        largest counter is subtracted from all counters and non-positive ones
        are dropped.
        """
        if capacity is not None:
            self.capacity = int(capacity)
        counters = self.counters
        for e, v in other.counters.items():
            counters[e] = counters.get(e, 0.0) + v
        self.processed_weight += other.processed_weight
        if len(counters) > self.capacity * self.slack:
            cut = heapq.nlargest(self.capacity + 1, counters.values())[-1]
            self.counters = {k: v - cut for k, v in counters.items() if v > cut}
        return self

    def error_bound(self) -> float:
        return self.processed_weight / self.capacity


def mg_update(sk: WeightedMG, e: Hashable, w: float) -> WeightedMG:
    return sk.copy().update(e, w)


def mg_merge(a: WeightedMG, b: WeightedMG, capacity: int | None = None) -> WeightedMG:
    ell = a.capacity if capacity is None else capacity
    return a.copy().merge(b, ell)


def mg_estimate(sk: WeightedMG, e: Hashable) -> float:
    return sk.estimate(e)


def summarize(stream: Iterable[tuple[Hashable, float]], capacity: int) -> WeightedMG:
    sk = WeightedMG(capacity)
    for e, w in stream:
        sk.update(e, w)
    return sk


def from_counts(counts: Mapping[Hashable, float], capacity: int) -> WeightedMG:
    """Build a summary that holds ``counts`` exactly (all must fit)."""
    if len(counts) > capacity:
        raise ValueError("more counts than counters")
    sk = WeightedMG(capacity)
    sk.counters = {k: float(v) for k, v in counts.items() if v > 0}
    sk.processed_weight = float(sum(sk.counters.values()))
    return sk
