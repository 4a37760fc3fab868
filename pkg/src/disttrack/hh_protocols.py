"""Site and coordinator state machines for distributed weighted heavy hitters.

Protocols:

* ``p1``    sites run a weighted Misra-Gries summary and ship it whenever their
            local weight reaches ``(eps/2m) W_hat``; the coordinator merges.
* ``p2``    sites ship their local weight at ``(eps/m) W_hat`` and an element's
            unsent weight when it alone reaches the same threshold; the
            coordinator broadcasts a fresh ``W_hat`` after every ``m`` weight
            reports.
* ``p3wor`` priority sampling without replacement.
* ``p3wr``  ``s`` independent with-replacement priority samplers.
* ``p4``    sites send exact local counts with probability ``1 - exp(-p w)``,
            ``p = 2 sqrt(m) / (eps W_hat)``; the coordinator adds ``1/p``.
"""
from __future__ import annotations

import math
import random
import statistics
from collections.abc import Hashable

import numpy as np

from .freq_sketch import WeightedMG
from .messages import Kind, Message, broadcast
from .sampler import (
    PrioritySamplerCoordinator,
    PrioritySamplerSite,
    ProtocolViolation,
    WRSamplerCoordinator,
    WRSamplerSite,
    default_sample_size,
)

HH_PROTOCOLS = ("p1", "p2", "p3wor", "p3wr", "p4")


def _check_eps(eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    return float(eps)


class HHSite:
    """Common site plumbing: identity, weight validation, cached ``W_hat``."""

    protocol = ""

    def __init__(self, site_id: int, m: int, eps: float, beta: float = math.inf):
        self.site_id = site_id
        self.m = m
        self.eps = _check_eps(eps)
        self.beta = beta
        # cold start: every site's first item has weight >= 1
        self.w_hat = float(m)

    def _check(self, w: float) -> None:
        if not 1.0 <= w <= self.beta:
            raise ValueError(f"weight {w!r} outside [1, {self.beta}]")

    def ingest(self, e: Hashable, w: float) -> list[Message]:
        raise NotImplementedError

    def on_broadcast(self, msg: Message) -> None:
        if msg.kind is not Kind.BROADCAST_W:
            raise ProtocolViolation(f"{self.protocol} site cannot handle {msg.kind}")
        self.w_hat = msg.body


class HHCoordinator:
    protocol = ""

    def __init__(self, m: int, eps: float):
        self.m = m
        self.eps = _check_eps(eps)
        self.rounds = 0

    def receive(self, msg: Message) -> list[Message]:
        raise NotImplementedError

    def estimate(self, e: Hashable) -> float:
        raise NotImplementedError

    def estimates(self) -> dict:
        """Estimated weight of every element the coordinator knows about."""
        raise NotImplementedError

    def total_estimate(self) -> float:
        raise NotImplementedError

    def _wrong(self, msg: Message):
        return ProtocolViolation(f"{self.protocol} coordinator cannot handle {msg.kind}")


# -- P1 ---------------------------------------------------------------------


class P1Site(HHSite):
    protocol = "p1"

    def __init__(self, site_id, m, eps, beta=math.inf):
        super().__init__(site_id, m, eps, beta)
        self.capacity = math.ceil(2.0 / self.eps - 1e-9)
        self.sketch = WeightedMG(self.capacity)
        self.local_weight = 0.0

    def ingest(self, e, w):
        self._check(w)
        self.sketch.update(e, w)
        self.local_weight += w
        if self.local_weight >= self.eps / (2 * self.m) * self.w_hat:
            sk, wi = self.sketch, self.local_weight
            self.sketch = WeightedMG(self.capacity)
            self.local_weight = 0.0
            return [Message(Kind.SUMMARY, self.site_id, (sk, wi), 2 * len(sk) + 1, len(sk) + 1)]
        return []


class P1Coordinator(HHCoordinator):
    protocol = "p1"

    def __init__(self, m, eps):
        super().__init__(m, eps)
        self.sketch = WeightedMG(math.ceil(2.0 / self.eps - 1e-9), slack=2.0)
        self.received_weight = 0.0
        self.w_hat = float(m)

    def receive(self, msg):
        if msg.kind is not Kind.SUMMARY:
            raise self._wrong(msg)
        sk, wi = msg.body
        self.sketch.merge(sk)
        self.received_weight += wi
        if self.received_weight / self.w_hat > 1.0 + self.eps / 2.0:
            self.w_hat = self.received_weight
            self.rounds += 1
            return [broadcast(Kind.BROADCAST_W, self.w_hat)]
        return []

    def estimate(self, e):
        return self.sketch.estimate(e)

    def estimates(self):
        return dict(self.sketch.counters)

    def total_estimate(self):
        return self.received_weight


# -- P2 ---------------------------------------------------------------------


class P2Site(HHSite):
    protocol = "p2"

    def __init__(self, site_id, m, eps, beta=math.inf):
        super().__init__(site_id, m, eps, beta)
        self.local_weight = 0.0
        self.deltas: dict = {}

    def ingest(self, e, w):
        self._check(w)
        thr = self.eps / self.m * self.w_hat
        out = []
        self.local_weight += w
        if self.local_weight >= thr:
            out.append(Message(Kind.TOTAL, self.site_id, self.local_weight, 1))
            self.local_weight = 0.0
        d = self.deltas.get(e, 0.0) + w
        if d >= thr:
            out.append(Message(Kind.ELEMENT_DELTA, self.site_id, (e, d), 2))
            self.deltas.pop(e, None)
        else:
            self.deltas[e] = d
        return out


class P2Coordinator(HHCoordinator):
    protocol = "p2"

    def __init__(self, m, eps):
        super().__init__(m, eps)
        self.w_hat = 0.0
        self.pending = 0
        self.counts: dict = {}
        self.element_messages = 0

    def receive(self, msg):
        if msg.kind is Kind.ELEMENT_DELTA:
            e, d = msg.body
            self.counts[e] = self.counts.get(e, 0.0) + d
            self.element_messages += 1
            return []
        if msg.kind is not Kind.TOTAL:
            raise self._wrong(msg)
        self.w_hat += msg.body
        self.pending += 1
        if self.pending >= self.m:
            self.pending = 0
            self.rounds += 1
            return [broadcast(Kind.BROADCAST_W, self.w_hat)]
        return []

    def estimate(self, e):
        return self.counts.get(e, 0.0)

    def estimates(self):
        return dict(self.counts)

    def total_estimate(self):
        return self.w_hat


# -- P3 without replacement -------------------------------------------------


class P3Site(HHSite):
    protocol = "p3wor"

    def __init__(self, site_id, m, eps, beta=math.inf, rng=None):
        super().__init__(site_id, m, eps, beta)
        self.sampler = PrioritySamplerSite(rng)

    def ingest(self, e, w):
        self._check(w)
        rho = self.sampler.offer(w)
        if rho is None:
            return []
        return [Message(Kind.PRIORITY_SAMPLE, self.site_id, (e, w, rho), 3)]

    def on_broadcast(self, msg):
        if msg.kind is not Kind.BROADCAST_TAU:
            raise ProtocolViolation(f"p3 site cannot handle {msg.kind}")
        self.sampler.tau = msg.body


class P3Coordinator(HHCoordinator):
    protocol = "p3wor"

    def __init__(self, m, eps, s=None):
        super().__init__(m, eps)
        self.s = default_sample_size(self.eps) if s is None else int(s)
        self.sampler = PrioritySamplerCoordinator(self.s)
        self._cache = None

    def receive(self, msg):
        if msg.kind is not Kind.PRIORITY_SAMPLE:
            raise self._wrong(msg)
        self._cache = None
        taus = self.sampler.ingest(*msg.body)
        self.rounds = self.sampler.rounds
        return [broadcast(Kind.BROADCAST_TAU, t) for t in taus]

    def _estimate(self):
        if self._cache is None:
            est = self.sampler.estimate()
            self._cache = (est.frequencies(), est.total)
        return self._cache

    def estimate(self, e):
        return self._estimate()[0].get(e, 0.0)

    def estimates(self):
        return dict(self._estimate()[0])

    def total_estimate(self):
        return self._estimate()[1]


# -- P3 with replacement ----------------------------------------------------


class P3WRSite(HHSite):
    protocol = "p3wr"

    def __init__(self, site_id, m, eps, beta=math.inf, rng=None, s=None):
        super().__init__(site_id, m, eps, beta)
        s = default_sample_size(self.eps) if s is None else int(s)
        self.sampler = WRSamplerSite(s, rng)

    def ingest(self, e, w):
        self._check(w)
        draws = self.sampler.offer(w)
        if draws is None:
            return []
        k = len(draws[0])
        return [Message(Kind.PRIORITY_DRAWS, self.site_id, (e, w, draws), 2 + 2 * k, k)]

    def on_broadcast(self, msg):
        if msg.kind is not Kind.BROADCAST_TAU:
            raise ProtocolViolation(f"p3wr site cannot handle {msg.kind}")
        self.sampler.tau = msg.body


class P3WRCoordinator(HHCoordinator):
    protocol = "p3wr"

    def __init__(self, m, eps, s=None):
        super().__init__(m, eps)
        self.s = default_sample_size(self.eps) if s is None else int(s)
        self.sampler = WRSamplerCoordinator(self.s)
        # the sampler tracks integer keys; elements are interned on arrival
        self._ids: dict = {}
        self._elements: list = []

    def receive(self, msg):
        if msg.kind is not Kind.PRIORITY_DRAWS:
            raise self._wrong(msg)
        e, _, (idx, pr) = msg.body
        key = self._ids.get(e)
        if key is None:
            key = self._ids[e] = len(self._elements)
            self._elements.append(e)
        taus = self.sampler.ingest(key, idx, pr)
        self.rounds = self.sampler.rounds
        return [broadcast(Kind.BROADCAST_TAU, t) for t in taus]

    def estimate(self, e):
        key = self._ids.get(e)
        return 0.0 if key is None else self.sampler.frequencies().get(key, 0.0)

    def estimates(self):
        return {self._elements[k]: f for k, f in self.sampler.frequencies().items()}

    def total_estimate(self):
        return self.sampler.total_estimate()


# -- P4 ---------------------------------------------------------------------


def p4_probability(m: int, eps: float, w_hat: float) -> float:
    return 2.0 * math.sqrt(m) / (eps * w_hat)


def p4_send_probability(p: float, w: float) -> float:
    """``1 - exp(-p w)``: chance that an item of weight ``w`` triggers a snapshot."""
    return -math.expm1(-p * w)


class P4Site(HHSite):
    """Exact local counts, randomized reporting, ``copies`` independent coin streams.

    Besides the snapshots, a deterministic side channel reports accumulated
    local weight once it exceeds ``W_hat / 2m`` so the coordinator can keep a
    2-approximate ``W_hat``.
    """

    protocol = "p4"

    def __init__(self, site_id, m, eps, beta=math.inf, rngs=None, copies=1):
        super().__init__(site_id, m, eps, beta)
        if rngs is None:
            rngs = [random.Random(site_id * 7919 + c) for c in range(copies)]
        self.rngs = list(rngs)
        self.counts: dict = {}
        self.local_total = 0.0
        self.unreported = 0.0
        self.p = p4_probability(m, self.eps, self.w_hat)

    def ingest(self, e, w):
        self._check(w)
        f = self.counts.get(e, 0.0) + w
        self.counts[e] = f
        self.local_total += w
        out = []
        p_send = p4_send_probability(self.p, w)
        for c, rng in enumerate(self.rngs):
            if rng.random() < p_send:
                out.append(Message(Kind.COUNT_SNAPSHOT, self.site_id, (c, e, f, self.local_total), 3))
        self.unreported += w
        if self.unreported >= self.w_hat / (2 * self.m):
            out.append(Message(Kind.TOTAL, self.site_id, self.unreported, 1))
            self.unreported = 0.0
        return out

    def on_broadcast(self, msg):
        super().on_broadcast(msg)
        self.p = p4_probability(self.m, self.eps, self.w_hat)


class P4Coordinator(HHCoordinator):
    protocol = "p4"

    def __init__(self, m, eps, copies=1):
        super().__init__(m, eps)
        self.copies = int(copies)
        self.w_hat = float(m)
        self.received_weight = 0.0
        # per copy: element -> {site: w_hat_{e,j}}, and site -> total snapshot
        self.snapshots: list[dict] = [{} for _ in range(self.copies)]
        self.site_totals: list[dict] = [{} for _ in range(self.copies)]

    @property
    def p(self) -> float:
        return p4_probability(self.m, self.eps, self.w_hat)

    def receive(self, msg):
        if msg.kind is Kind.COUNT_SNAPSHOT:
            c, e, f, total = msg.body
            inv_p = 1.0 / self.p
            self.snapshots[c].setdefault(e, {})[msg.origin] = f + inv_p
            self.site_totals[c][msg.origin] = total + inv_p
            return []
        if msg.kind is not Kind.TOTAL:
            raise self._wrong(msg)
        self.received_weight += msg.body
        if self.received_weight >= 2.0 * self.w_hat:
            while self.received_weight >= 2.0 * self.w_hat:
                self.w_hat *= 2.0
            self.rounds += 1
            return [broadcast(Kind.BROADCAST_W, self.w_hat)]
        return []

    def copy_estimate(self, c: int, e) -> float:
        return sum(self.snapshots[c].get(e, {}).values())

    def copy_estimates(self, c: int) -> dict:
        return {e: sum(v.values()) for e, v in self.snapshots[c].items()}

    def estimate(self, e):
        return statistics.median(self.copy_estimate(c, e) for c in range(self.copies))

    def estimates(self):
        keys = set().union(*(s.keys() for s in self.snapshots))
        per = [self.copy_estimates(c) for c in range(self.copies)]
        return {e: statistics.median(p.get(e, 0.0) for p in per) for e in keys}

    def total_estimate(self):
        return statistics.median(sum(t.values()) for t in self.site_totals)


# -- construction and queries -----------------------------------------------


def make_hh_protocol(
    protocol: str,
    m: int,
    eps: float,
    *,
    seed: int = 0,
    beta: float = math.inf,
    sample_size: int | None = None,
    copies: int = 1,
):
    """Build ``(sites, coordinator)`` for one protocol instance."""
    if m < 1:
        raise ValueError(f"need at least one site, got m={m}")
    protocol = protocol.lower()
    seeds = np.random.SeedSequence(seed).spawn(m)
    if protocol == "p1":
        return [P1Site(j, m, eps, beta) for j in range(m)], P1Coordinator(m, eps)
    if protocol == "p2":
        return [P2Site(j, m, eps, beta) for j in range(m)], P2Coordinator(m, eps)
    if protocol in ("p3", "p3wor"):
        sites = [P3Site(j, m, eps, beta, random.Random(_int_seed(seeds[j]))) for j in range(m)]
        return sites, P3Coordinator(m, eps, sample_size)
    if protocol == "p3wr":
        sites = [P3WRSite(j, m, eps, beta, np.random.default_rng(seeds[j]), sample_size) for j in range(m)]
        return sites, P3WRCoordinator(m, eps, sample_size)
    if protocol == "p4":
        sites = []
        for j in range(m):
            rngs = [random.Random(_int_seed(c)) for c in seeds[j].spawn(copies)]
            sites.append(P4Site(j, m, eps, beta, rngs, copies))
        return sites, P4Coordinator(m, eps, copies)
    raise ValueError(f"unknown heavy-hitter protocol {protocol!r}; expected one of {HH_PROTOCOLS}")


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(2, dtype=np.uint64)[0])


def classify_heavy(w_e: float, w_hat: float, phi: float, eps: float) -> bool:
    """Report ``e`` iff ``w_e / w_hat > phi - eps/2``.

    When ``|f_e - w_e| <= (eps/6) W`` and ``|W - w_hat| <= (eps/5) W`` this
    accepts every ``phi``-heavy hitter and rejects everything below
    ``phi - eps``.
    """
    if w_hat <= 0.0:
        raise ValueError("total weight estimate must be positive")
    return w_e / w_hat > phi - eps / 2.0


def hh_query(coord: HHCoordinator, phi: float, eps: float | None = None) -> list[tuple]:
    """Elements whose estimated share is at least ``phi - eps/2``, heaviest first."""
    if not 0.0 < phi < 1.0:
        raise ValueError(f"phi must lie in (0, 1), got {phi!r}")
    eps = coord.eps if eps is None else eps
    try:
        total = coord.total_estimate()
    except ValueError:
        return []
    if total <= 0.0:
        return []
    cut = (phi - eps / 2.0) * total
    hits = [(e, w) for e, w in coord.estimates().items() if w >= cut]
    hits.sort(key=lambda t: (-t[1], str(t[0])))
    return hits
