"""Site and coordinator state machines for distributed matrix tracking.

Every row ``a`` carries the implicit weight ``|a|^2``.  The coordinator keeps
``B`` such that ``|Ax|^2 - |Bx|^2`` is small relative to ``|A|_F^2``.

* ``mp1``   Frequent Directions at each site, shipped at ``(eps/2m) F_hat``.
* ``mp2``   each site keeps its unsent residual exactly and ships any singular
            direction whose squared singular value reaches ``(eps/m) F_hat``.
* ``mp2b``  ``mp2`` with two Frequent Directions sketches per site
            (``eps' = eps/4m``) and send threshold ``(3eps/4m) F_hat``.
* ``mp3wor`` / ``mp3wr`` priority sampling on ``|a|^2``.
* ``mp4``   the randomized count-style protocol transplanted to matrices.  It
            is only exact along the fixed right singular vectors of each
            site's approximation and carries no error guarantee.
"""
from __future__ import annotations

import logging
import math
import random

import numpy as np

from .matrix_sketch import FrequentDirections
from .messages import Kind, Message, broadcast
from .sampler import (
    PrioritySamplerCoordinator,
    PrioritySamplerSite,
    ProtocolViolation,
    WRSamplerCoordinator,
    WRSamplerSite,
    default_sample_size,
)

log = logging.getLogger(__name__)

MATRIX_PROTOCOLS = ("mp1", "mp2", "mp2b", "mp3wor", "mp3wr", "mp4")


class MSite:
    protocol = ""

    def __init__(self, site_id: int, m: int, eps: float, d: int):
        if not 0.0 < eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
        self.site_id = site_id
        self.m = m
        self.eps = float(eps)
        self.d = int(d)
        self.f_hat = float(m)
        self.light_rows = 0
        self.skipped_rows = 0

    def _prepare(self, row) -> tuple[np.ndarray, float] | None:
        a = np.asarray(row, dtype=float)
        if a.shape != (self.d,):
            raise ValueError(f"row has shape {a.shape}, expected ({self.d},)")
        n2 = float(a @ a)
        if not math.isfinite(n2):
            raise ValueError("row has non-finite entries")
        if n2 == 0.0:
            self.skipped_rows += 1
            log.warning("site %d: ignoring all-zero row", self.site_id)
            return None
        if n2 < 1.0:
            self.light_rows += 1
        return a, n2

    def ingest(self, row) -> list[Message]:
        raise NotImplementedError

    def on_broadcast(self, msg: Message) -> None:
        if msg.kind is not Kind.BROADCAST_F:
            raise ProtocolViolation(f"{self.protocol} site cannot handle {msg.kind}")
        self.f_hat = msg.body


class MCoordinator:
    protocol = ""

    def __init__(self, m: int, eps: float, d: int):
        self.m = m
        self.eps = float(eps)
        self.d = int(d)
        self.rounds = 0

    def receive(self, msg: Message) -> list[Message]:
        raise NotImplementedError

    def query(self) -> np.ndarray:
        raise NotImplementedError

    def gram(self) -> np.ndarray:
        b = self.query()
        return b.T @ b if b.size else np.zeros((self.d, self.d))

    def _wrong(self, msg):
        return ProtocolViolation(f"{self.protocol} coordinator cannot handle {msg.kind}")


# -- MP1 --------------------------------------------------------------------


class MP1Site(MSite):
    protocol = "mp1"

    def __init__(self, site_id, m, eps, d):
        super().__init__(site_id, m, eps, d)
        self.sketch = FrequentDirections.for_error(self.eps / 2.0, d)
        self.local_norm = 0.0

    def ingest(self, row):
        prep = self._prepare(row)
        if prep is None:
            return []
        a, n2 = prep
        self.sketch.update(a)
        self.local_norm += n2
        if self.local_norm >= self.eps / (2 * self.m) * self.f_hat:
            b, f = self.sketch.rows, self.local_norm
            self.sketch.clear()
            self.local_norm = 0.0
            k = b.shape[0]
            return [Message(Kind.SKETCH_AND_NORM, self.site_id, (b, f), k * self.d + 1, k + 1)]
        return []


class MP1Coordinator(MCoordinator):
    protocol = "mp1"

    def __init__(self, m, eps, d):
        super().__init__(m, eps, d)
        self.sketch = FrequentDirections.for_error(self.eps / 2.0, d)
        self.received_norm = 0.0
        self.f_hat = float(m)

    def receive(self, msg):
        if msg.kind is not Kind.SKETCH_AND_NORM:
            raise self._wrong(msg)
        b, f = msg.body
        self.sketch.merge_rows(b, f)
        self.received_norm += f
        if self.received_norm / self.f_hat > 1.0 + self.eps / 2.0:
            self.f_hat = self.received_norm
            self.rounds += 1
            return [broadcast(Kind.BROADCAST_F, self.f_hat)]
        return []

    def query(self):
        return self.sketch.rows

    def gram(self):
        return self.sketch.gram().copy()


# -- MP2 --------------------------------------------------------------------


class MP2Site(MSite):
    """Exact residual ``B_j`` stored as ``ΣV^T``.

    ``svd_every > 1`` defers the decomposition to every that many rows, which
    is cheaper but lets the residual exceed the threshold in between.
    """

    protocol = "mp2"

    def __init__(self, site_id, m, eps, d, svd_every: int = 1):
        super().__init__(site_id, m, eps, d)
        # until the first broadcast everything is reported, keeping F_hat exact
        self.f_hat = 0.0
        self.svd_every = max(1, int(svd_every))
        self._since = 0
        self.residual = np.zeros((0, self.d))
        self.residual_norm = 0.0
        self.local_norm = 0.0

    def ingest(self, row):
        prep = self._prepare(row)
        if prep is None:
            return []
        a, n2 = prep
        thr = self.eps / self.m * self.f_hat
        out = []
        self.local_norm += n2
        if self.local_norm >= thr:
            out.append(Message(Kind.NORM_ONLY, self.site_id, self.local_norm, 1))
            self.local_norm = 0.0
        b = np.vstack([self.residual, a])
        self.residual_norm += n2
        self._since += 1
        if self._since < self.svd_every:
            self.residual = b
            return out
        self._since = 0
        if self.residual_norm < thr and b.shape[0] <= self.d:
            # sigma_max^2 <= |B_j|_F^2 < thr: nothing can be shed
            self.residual = b
            return out
        _, s, vt = np.linalg.svd(b, full_matrices=False)
        sq = s * s
        send = (sq >= thr) & (sq > 0.0)
        for k in np.flatnonzero(send):
            out.append(Message(Kind.DIRECTION, self.site_id, s[k] * vt[k], self.d))
        keep = ~send & (s > 0.0)
        self.residual = s[keep][:, None] * vt[keep]
        self.residual_norm = float(sq[keep].sum())
        return out

    def gram(self) -> np.ndarray:
        return self.residual.T @ self.residual


class MP2BoundedSite(MSite):
    """Residual tracked as ``|Ã_j x|^2 - |S̃_j x|^2`` with two FD sketches."""

    protocol = "mp2b"

    def __init__(self, site_id, m, eps, d):
        super().__init__(site_id, m, eps, d)
        self.f_hat = 0.0
        sub = self.eps / (4 * self.m)
        self.seen = FrequentDirections.for_error(sub, d)
        self.sent = FrequentDirections.for_error(sub, d)
        self.local_norm = 0.0

    def ingest(self, row):
        prep = self._prepare(row)
        if prep is None:
            return []
        a, n2 = prep
        out = []
        self.local_norm += n2
        if self.local_norm >= self.eps / self.m * self.f_hat:
            out.append(Message(Kind.NORM_ONLY, self.site_id, self.local_norm, 1))
            self.local_norm = 0.0
        self.seen.update(a)
        thr = 3.0 * self.eps / (4 * self.m) * self.f_hat
        g = self.gram()
        if np.trace(g) < thr:
            return out
        lam, vecs = np.linalg.eigh(g)
        for k in np.flatnonzero((lam >= thr) & (lam > 0.0)):
            r = math.sqrt(lam[k]) * vecs[:, k]
            out.append(Message(Kind.DIRECTION, self.site_id, r, self.d))
            self.sent.update(r)
        return out

    def gram(self) -> np.ndarray:
        g = self.seen.gram() - self.sent.gram()
        return (g + g.T) / 2.0


class MP2Coordinator(MCoordinator):
    protocol = "mp2"

    def __init__(self, m, eps, d):
        super().__init__(m, eps, d)
        self.f_hat = 0.0
        self.pending = 0
        self.rows: list[np.ndarray] = []
        self._gram = np.zeros((self.d, self.d))

    def receive(self, msg):
        if msg.kind is Kind.DIRECTION:
            r = msg.body
            self.rows.append(r)
            self._gram += np.outer(r, r)
            return []
        if msg.kind is not Kind.NORM_ONLY:
            raise self._wrong(msg)
        self.f_hat += msg.body
        self.pending += 1
        if self.pending >= self.m:
            self.pending = 0
            self.rounds += 1
            return [broadcast(Kind.BROADCAST_F, self.f_hat)]
        return []

    def query(self):
        return np.array(self.rows) if self.rows else np.zeros((0, self.d))

    def gram(self):
        return self._gram.copy()


# -- MP3 --------------------------------------------------------------------


class MP3Site(MSite):
    protocol = "mp3wor"

    def __init__(self, site_id, m, eps, d, rng=None):
        super().__init__(site_id, m, eps, d)
        self.sampler = PrioritySamplerSite(rng)

    def ingest(self, row):
        prep = self._prepare(row)
        if prep is None:
            return []
        a, n2 = prep
        rho = self.sampler.offer(n2)
        if rho is None:
            return []
        return [Message(Kind.SAMPLED_ROW, self.site_id, (a, n2, rho), self.d + 2)]

    def on_broadcast(self, msg):
        if msg.kind is not Kind.BROADCAST_TAU:
            raise ProtocolViolation(f"mp3 site cannot handle {msg.kind}")
        self.sampler.tau = msg.body


class MP3Coordinator(MCoordinator):
    protocol = "mp3wor"

    def __init__(self, m, eps, d, s=None):
        super().__init__(m, eps, d)
        self.s = default_sample_size(self.eps) if s is None else int(s)
        self.sampler = PrioritySamplerCoordinator(self.s)

    def receive(self, msg):
        if msg.kind is not Kind.SAMPLED_ROW:
            raise self._wrong(msg)
        taus = self.sampler.ingest(*msg.body)
        self.rounds = self.sampler.rounds
        return [broadcast(Kind.BROADCAST_TAU, t) for t in taus]

    def query(self):
        if len(self.sampler) == 0:
            return np.zeros((0, self.d))
        est = self.sampler.estimate()
        if not est.entries:
            return np.zeros((0, self.d))
        # rows lighter than rho_hat are scaled up to squared norm rho_hat
        return np.array([row * math.sqrt(wb / w) for row, w, wb in est.entries])


class MP3WRSite(MSite):
    protocol = "mp3wr"

    def __init__(self, site_id, m, eps, d, rng=None, s=None):
        super().__init__(site_id, m, eps, d)
        s = default_sample_size(self.eps) if s is None else int(s)
        self.sampler = WRSamplerSite(s, rng)
        self._seq = 0

    def ingest(self, row):
        prep = self._prepare(row)
        if prep is None:
            return []
        a, n2 = prep
        self._seq += 1
        draws = self.sampler.offer(n2)
        if draws is None:
            return []
        k = len(draws[0])
        key = (self.site_id, self._seq)
        return [Message(Kind.SAMPLED_ROW_DRAWS, self.site_id, (key, a, n2, draws), self.d + 1 + 2 * k, k)]

    def on_broadcast(self, msg):
        if msg.kind is not Kind.BROADCAST_TAU:
            raise ProtocolViolation(f"mp3wr site cannot handle {msg.kind}")
        self.sampler.tau = msg.body


class MP3WRCoordinator(MCoordinator):
    protocol = "mp3wr"

    def __init__(self, m, eps, d, s=None):
        super().__init__(m, eps, d)
        self.s = default_sample_size(self.eps) if s is None else int(s)
        self.sampler = WRSamplerCoordinator(self.s)
        self._ids: dict = {}
        self._rows: dict[int, np.ndarray] = {}

    def receive(self, msg):
        if msg.kind is not Kind.SAMPLED_ROW_DRAWS:
            raise self._wrong(msg)
        key, a, _, (idx, pr) = msg.body
        rid = self._ids.setdefault(key, len(self._ids))
        before = self.sampler.item1[idx].copy()
        taus = self.sampler.ingest(rid, idx, pr)
        if np.any(self.sampler.item1[idx] != before):
            self._rows[rid] = a
        if len(self._rows) > 4 * self.s:
            live = set(self.sampler.item1.tolist())
            self._rows = {k: v for k, v in self._rows.items() if k in live}
            self._ids = {k: v for k, v in self._ids.items() if v in live}
        self.rounds = self.sampler.rounds
        return [broadcast(Kind.BROADCAST_TAU, t) for t in taus]

    def query(self):
        keys, each = self.sampler.sample()
        rows = []
        for k in keys:
            if k < 0:
                continue
            a = self._rows[int(k)]
            rows.append(a * math.sqrt(each / float(a @ a)))
        return np.array(rows) if rows else np.zeros((0, self.d))


# -- MP4 --------------------------------------------------------------------


class MP4Site(MSite):
    """Exact local Gram plus an approximation ``Z V^T`` shared with the coordinator.

    The approximation starts empty, so its right singular basis is the
    standard basis, and the update ``Â_j = Z V^T`` never rotates it.
    """

    protocol = "mp4"

    def __init__(self, site_id, m, eps, d, rng=None):
        super().__init__(site_id, m, eps, d)
        self.rng = rng if isinstance(rng, random.Random) else random.Random(rng)
        self.local_gram = np.zeros((self.d, self.d))
        self.basis = np.eye(self.d)
        self.z = np.zeros(self.d)
        self.unreported = 0.0
        self.p = self._prob()

    def _prob(self) -> float:
        return 2.0 * math.sqrt(self.m) / (self.eps * self.f_hat)

    def ingest(self, row):
        prep = self._prepare(row)
        if prep is None:
            return []
        a, n2 = prep
        self.local_gram += np.outer(a, a)
        out = []
        if self.rng.random() < -math.expm1(-self.p * n2):
            v = self.basis
            along = np.einsum("ji,jk,ki->i", v, self.local_gram, v)
            self.z = np.sqrt(np.maximum(along, 0.0) + 1.0 / self.p)
            out.append(
                Message(Kind.SINGULAR_SNAPSHOT, self.site_id, (self.z.copy(), v), self.d + self.d * self.d, heavy=True)
            )
        self.unreported += n2
        if self.unreported >= self.f_hat / (2 * self.m):
            out.append(Message(Kind.NORM_ONLY, self.site_id, self.unreported, 1))
            self.unreported = 0.0
        return out

    def approximation(self) -> np.ndarray:
        return self.z[:, None] * self.basis.T

    def on_broadcast(self, msg):
        super().on_broadcast(msg)
        self.p = self._prob()


class MP4Coordinator(MCoordinator):
    protocol = "mp4"

    def __init__(self, m, eps, d):
        super().__init__(m, eps, d)
        self.f_hat = float(m)
        self.received_norm = 0.0
        self.factors: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def receive(self, msg):
        if msg.kind is Kind.SINGULAR_SNAPSHOT:
            z, v = msg.body
            self.factors[msg.origin] = (z, v)
            return []
        if msg.kind is not Kind.NORM_ONLY:
            raise self._wrong(msg)
        self.received_norm += msg.body
        if self.received_norm >= 2.0 * self.f_hat:
            while self.received_norm >= 2.0 * self.f_hat:
                self.f_hat *= 2.0
            self.rounds += 1
            return [broadcast(Kind.BROADCAST_F, self.f_hat)]
        return []

    def query(self):
        if not self.factors:
            return np.zeros((0, self.d))
        return np.vstack([z[:, None] * v.T for _, (z, v) in sorted(self.factors.items())])


def make_matrix_protocol(
    protocol: str,
    m: int,
    eps: float,
    d: int,
    *,
    seed: int = 0,
    sample_size: int | None = None,
    svd_every: int = 1,
):
    """Build ``(sites, coordinator)`` for one matrix-tracking protocol instance."""
    if m < 1:
        raise ValueError(f"need at least one site, got m={m}")
    protocol = protocol.lower()
    seeds = np.random.SeedSequence(seed).spawn(m)
    if protocol == "mp1":
        return [MP1Site(j, m, eps, d) for j in range(m)], MP1Coordinator(m, eps, d)
    if protocol == "mp2":
        return [MP2Site(j, m, eps, d, svd_every) for j in range(m)], MP2Coordinator(m, eps, d)
    if protocol == "mp2b":
        return [MP2BoundedSite(j, m, eps, d) for j in range(m)], MP2Coordinator(m, eps, d)
    if protocol in ("mp3", "mp3wor"):
        sites = [MP3Site(j, m, eps, d, random.Random(_int_seed(seeds[j]))) for j in range(m)]
        return sites, MP3Coordinator(m, eps, d, sample_size)
    if protocol == "mp3wr":
        sites = [MP3WRSite(j, m, eps, d, np.random.default_rng(seeds[j]), sample_size) for j in range(m)]
        return sites, MP3WRCoordinator(m, eps, d, sample_size)
    if protocol == "mp4":
        sites = [MP4Site(j, m, eps, d, random.Random(_int_seed(seeds[j]))) for j in range(m)]
        return sites, MP4Coordinator(m, eps, d)
    raise ValueError(f"unknown matrix protocol {protocol!r}; expected one of {MATRIX_PROTOCOLS}")


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(2, dtype=np.uint64)[0])


def m_query(coord: MCoordinator) -> np.ndarray:
    return coord.query()
