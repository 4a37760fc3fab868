"""Distributed priority sampling, without and with replacement.

Each site assigns an item of weight ``w`` the priority ``rho = w / r`` with
``r ~ Unif(0, 1)`` and forwards it when ``rho >= tau``.  The coordinator keeps
two queues split at ``2 * tau``; when the upper queue reaches ``s`` entries it
doubles ``tau``, drops the lower queue and re-splits the upper one.

The with-replacement variant runs ``s`` independent single-item samplers and
keeps the two largest priorities per sampler.
"""
from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class ProtocolViolation(RuntimeError):
    """A message arrived that the receiving state machine cannot accept."""


def default_sample_size(eps: float) -> int:
    """``ceil((1/eps^2) ln(1/eps))``, never below 16."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    return max(16, math.ceil(math.log(1.0 / eps) / (eps * eps)))


def draw_priority(w: float, rng: random.Random) -> float:
    r = rng.random()
    while r == 0.0:
        r = rng.random()
    return w / r


class PrioritySamplerSite:
    """Site half of the without-replacement sampler: a threshold and an RNG."""

    __slots__ = ("tau", "rng")

    def __init__(self, rng: random.Random | int | None = None, tau: float = 1.0):
        self.tau = float(tau)
        self.rng = rng if isinstance(rng, random.Random) else random.Random(rng)

    def offer(self, w: float) -> float | None:
        """Priority of the item if it must be forwarded, else ``None``."""
        if not w > 0.0:
            raise ValueError(f"weight must be positive, got {w!r}")
        rho = draw_priority(w, self.rng)
        return rho if rho >= self.tau else None


def priority_offer(st: PrioritySamplerSite, item: Any, w: float):
    """Return ``(item, w, rho)`` when the draw clears the site threshold."""
    rho = st.offer(w)
    return None if rho is None else (item, w, rho)


@dataclass
class SampleEstimate:
    """Reweighted sample: entries ``(item, w, w_bar)`` and threshold ``rho_hat``."""

    entries: list[tuple[Any, float, float]]
    rho_hat: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(sum(wb for _, _, wb in self.entries))

    def frequencies(self, key=None) -> dict:
        out: dict = {}
        for item, _, wb in self.entries:
            k = item if key is None else key(item)
            out[k] = out.get(k, 0.0) + wb
        return out


class PrioritySamplerCoordinator:
    """Coordinator half: queues ``Q_j`` (lower) and ``Q_{j+1}`` (upper).

    Queue entries are ``(rho, seq, item, w)`` heaps; ``seq`` breaks ties by
    arrival order.
    """

    def __init__(self, s: int, tau: float = 1.0):
        if int(s) != s or s < 1:
            raise ValueError(f"sample size must be a positive integer, got {s!r}")
        self.s = int(s)
        self.tau = float(tau)
        self.lower: list[tuple] = []
        self.upper: list[tuple] = []
        self.rounds = 0
        self._seq = 0

    def __len__(self) -> int:
        return len(self.lower) + len(self.upper)

    def ingest(self, item: Any, w: float, rho: float) -> list[float]:
        """Route one forwarded draw; returns the thresholds to broadcast."""
        if rho < self.tau:
            raise ProtocolViolation(f"priority {rho} below threshold {self.tau}")
        self._seq += 1
        entry = (rho, self._seq, item, w)
        if rho > 2.0 * self.tau:
            heapq.heappush(self.upper, entry)
        else:
            heapq.heappush(self.lower, entry)
        out = []
        while len(self.upper) >= self.s:
            out.append(self._advance())
        return out

    def _advance(self) -> float:
        self.tau *= 2.0
        self.rounds += 1
        cut = 2.0 * self.tau
        stay = [e for e in self.upper if e[0] <= cut]
        move = [e for e in self.upper if e[0] > cut]
        heapq.heapify(stay)
        heapq.heapify(move)
        self.lower, self.upper = stay, move
        return self.tau

    def estimate(self, size: int | None = None) -> SampleEstimate:
        """Drop the lowest-priority entry and reweight the rest by ``max(w, rho_hat)``.

        With ``size`` only the ``size`` highest priorities are kept and
        ``rho_hat`` is the next one, a fixed-size subsample of the pool.
        """
        if not self.lower and not self.upper:
            raise ValueError("empty sample")
        pool = self.lower + self.upper
        if size is not None:
            if not 1 <= size < len(pool):
                raise ValueError(f"size must lie in [1, {len(pool) - 1}], got {size!r}")
            top = heapq.nlargest(size + 1, pool)
            rho_hat = top[-1][0]
            return SampleEstimate([(item, w, max(w, rho_hat)) for _, _, item, w in top[:-1]], rho_hat)
        low = self.lower[0] if self.lower else self.upper[0]
        rho_hat = low[0]
        entries = [(item, w, max(w, rho_hat)) for rho, seq, item, w in pool if seq != low[1]]
        return SampleEstimate(entries, rho_hat)


def coord_ingest(st: PrioritySamplerCoordinator, msg) -> list[float]:
    item, w, rho = msg
    return st.ingest(item, w, rho)


def extract_estimate(st: PrioritySamplerCoordinator) -> SampleEstimate:
    return st.estimate()


class WRSamplerSite:
    """Site half of ``s`` independent with-replacement samplers.

    Drawing ``s`` uniforms per item is wasteful when few clear the threshold.
    The number of samplers whose priority clears ``tau`` is Binomial(s, q) with
    ``q = min(1, w/tau)``, their indices form a uniform subset, and each
    conditioned ``r`` is uniform on ``(0, q]``; that is the same joint law.
    """

    __slots__ = ("s", "tau", "rng")

    def __init__(self, s: int, rng: np.random.Generator | int | None = None, tau: float = 1.0):
        self.s = int(s)
        self.tau = float(tau)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def offer(self, w: float):
        """``(indices, priorities)`` of samplers that clear the threshold, or ``None``."""
        if not w > 0.0:
            raise ValueError(f"weight must be positive, got {w!r}")
        q = min(1.0, w / self.tau)
        rng = self.rng
        k = int(rng.binomial(self.s, q)) if q < 1.0 else self.s
        if k == 0:
            return None
        if k == self.s:
            idx = np.arange(self.s)
        elif k * 8 < self.s:
            idx = rng.choice(self.s, size=k, replace=False)
        else:
            idx = np.flatnonzero(rng.permutation(self.s) < k)
        r = q * (1.0 - rng.random(k))
        return idx, w / r


def wr_offer(st: WRSamplerSite, item: Any, w: float) -> list[tuple[int, Any, float, float]]:
    out = st.offer(w)
    if out is None:
        return []
    idx, rho = out
    return [(int(i), item, w, float(p)) for i, p in zip(idx, rho)]


class WRSamplerCoordinator:
    """Top-two priorities per sampler; the round ends once every second priority exceeds ``2 tau``."""

    def __init__(self, s: int, tau: float = 1.0):
        if int(s) != s or s < 1:
            raise ValueError(f"sample size must be a positive integer, got {s!r}")
        self.s = int(s)
        self.tau = float(tau)
        self.rho1 = np.zeros(self.s)
        self.rho2 = np.zeros(self.s)
        self.item1 = np.full(self.s, -1, dtype=np.int64)
        self.rounds = 0
        self._done = 0

    def ingest(self, key: int, indices: np.ndarray, priorities: np.ndarray) -> list[float]:
        """Absorb the draws of one item (``indices`` distinct); returns broadcasts."""
        idx = np.asarray(indices, dtype=np.int64)
        pr = np.asarray(priorities, dtype=float)
        if idx.size and (idx.min() < 0 or idx.max() >= self.s):
            raise ProtocolViolation("sampler index out of range")
        if idx.size and pr.min() < self.tau:
            raise ProtocolViolation(f"priority below threshold {self.tau}")
        r1 = self.rho1[idx]
        r2 = self.rho2[idx]
        top = pr > r1
        new2 = np.where(top, r1, np.maximum(r2, pr))
        self.rho1[idx] = np.where(top, pr, r1)
        self.rho2[idx] = new2
        self.item1[idx[top]] = key
        cut = 2.0 * self.tau
        self._done += int(np.count_nonzero((new2 > cut) & ~(r2 > cut)))
        out = []
        while self._done >= self.s:
            self.tau *= 2.0
            self.rounds += 1
            self._done = int(np.count_nonzero(self.rho2 > 2.0 * self.tau))
            out.append(self.tau)
        return out

    def total_estimate(self) -> float:
        """Mean of the second priorities; each is an unbiased estimate of the total weight."""
        return float(self.rho2.mean())

    def sample(self) -> tuple[np.ndarray, float]:
        """Sampled item keys (``-1`` for empty samplers) and the common weight ``W_hat / s``."""
        return self.item1.copy(), self.total_estimate() / self.s

    def frequencies(self) -> dict[int, float]:
        keys, each = self.sample()
        vals, counts = np.unique(keys[keys >= 0], return_counts=True)
        return {int(v): float(c) * each for v, c in zip(vals, counts)}


def wr_coord_ingest(st: WRSamplerCoordinator, key: int, draws) -> list[float]:
    if not draws:
        return []
    idx = np.array([d[0] for d in draws])
    pr = np.array([d[3] for d in draws])
    return st.ingest(key, idx, pr)
