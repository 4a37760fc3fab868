"""Deterministic event loop for the coordinator model.

Each tuple goes to one site.  Whatever that site emits is delivered to the
coordinator in order, and every broadcast the coordinator answers with is
applied to all sites before the next tuple.  Queries run against the
coordinator and an exact oracle maintained alongside.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .data import ElementStream, RowStream
from .evaluation import ExactHHOracle, hh_quality, matrix_quality_gram
from .hh_protocols import HH_PROTOCOLS, hh_query, make_hh_protocol
from .matrix_protocols import MATRIX_PROTOCOLS, make_matrix_protocol
from .matrix_sketch import CovarianceAccumulator
from .sampler import default_sample_size

ASSIGNMENTS = ("uniform", "round-robin", "hint")
_ALIASES = {"p3": "p3wor", "mp3": "mp3wor"}


@dataclass(frozen=True)
class SimConfig:
    protocol: str = "p2"
    m: int = 50
    eps: float = 1e-3
    phi: float = 0.05
    beta: float = 1000.0
    assignment: str = "uniform"
    query_every: int | None = None
    seed: int = 0
    repetitions: int = 1
    copies: int = 1
    sample_size: int | None = None
    strict: bool = False
    svd_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "protocol", _ALIASES.get(self.protocol.lower(), self.protocol.lower()))
        if self.protocol not in HH_PROTOCOLS + MATRIX_PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps!r}")
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f"phi must lie in (0, 1), got {self.phi!r}")
        if not self.beta >= 1.0:
            raise ValueError(f"beta must be at least 1, got {self.beta!r}")
        if self.assignment not in ASSIGNMENTS:
            raise ValueError(f"assignment must be one of {ASSIGNMENTS}, got {self.assignment!r}")
        if self.query_every is not None and self.query_every < 1:
            raise ValueError(f"query_every must be positive, got {self.query_every!r}")
        if self.repetitions < 1 or self.copies < 1:
            raise ValueError("repetitions and copies must be positive")

    @property
    def is_matrix(self) -> bool:
        return self.protocol in MATRIX_PROTOCOLS

    @property
    def protocol_eps(self) -> float:
        """Accuracy the protocol runs at; strict mode tightens it for the query rule."""
        return self.eps / 6.0 if self.strict else self.eps

    def resolved(self) -> dict:
        """Configuration with derived defaults filled in."""
        out = asdict(self)
        if self.protocol in ("p3wor", "p3wr", "mp3wor", "mp3wr") and self.sample_size is None:
            out["sample_size"] = default_sample_size(self.protocol_eps)
        return out


@dataclass
class Tally:
    up_transmissions: int = 0
    up_units: int = 0
    up_scalars: int = 0
    broadcasts: int = 0
    heavy: int = 0
    by_kind: dict = field(default_factory=dict)

    def record(self, msg, m: int) -> None:
        k = str(msg.kind)
        c = self.by_kind.setdefault(k, [0, 0, 0])
        c[0] += 1
        c[1] += msg.units
        c[2] += msg.scalars
        if msg.is_broadcast:
            self.broadcasts += 1
        else:
            self.up_transmissions += 1
            self.up_units += msg.units
            self.up_scalars += msg.scalars
            self.heavy += int(msg.heavy)

    def messages(self, m: int) -> int:
        """Site-to-coordinator units plus ``m`` per broadcast."""
        return self.up_units + m * self.broadcasts

    def scalars(self, m: int) -> int:
        return self.up_scalars + m * self.broadcasts

    def units_of(self, kind: str) -> int:
        return self.by_kind.get(kind, [0, 0, 0])[1]

    def count_of(self, kind: str) -> int:
        return self.by_kind.get(kind, [0, 0, 0])[0]


@dataclass
class RunReport:
    config: dict
    n: int
    rows: list[dict]
    tally: Tally
    rounds: int
    wall_time: float = 0.0

    @property
    def final(self) -> dict:
        return self.rows[-1]

    @property
    def messages(self) -> int:
        return self.tally.messages(self.config["m"])

    def summary(self) -> dict:
        t = self.tally
        m = self.config["m"]
        return {
            "config": self.config,
            "n": self.n,
            "rounds": self.rounds,
            "msg": t.messages(m),
            "up_units": t.up_units,
            "up_transmissions": t.up_transmissions,
            "broadcasts": t.broadcasts,
            "scalars": t.scalars(m),
            "heavy": t.heavy,
            "by_kind": {k: {"count": v[0], "units": v[1], "scalars": v[2]} for k, v in sorted(t.by_kind.items())},
            "final": self.final,
            "wall_time": self.wall_time,
        }

    def to_csv(self, fh=None, header: bool = True) -> str:
        """Per-query rows preceded by ``# config`` comment lines.  Wall time is left out."""
        buf = io.StringIO()
        if header:
            buf.write("# config " + json.dumps(self.config, sort_keys=True) + "\n")
        if self.rows:
            w = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
            if header:
                w.writeheader()
            w.writerows(self.rows)
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _assignments(cfg: SimConfig, stream) -> np.ndarray:
    n = len(stream)
    if cfg.assignment == "round-robin":
        return np.arange(n) % cfg.m
    if cfg.assignment == "hint":
        if stream.site_hints is None:
            raise ValueError("assignment 'hint' needs a stream with site hints")
        hints = np.asarray(stream.site_hints)
        if hints.size and (hints.min() < 0 or hints.max() >= cfg.m):
            raise ValueError(f"site hints must lie in [0, {cfg.m})")
        return hints
    rng = np.random.default_rng([cfg.seed, 0x5173])
    return rng.integers(0, cfg.m, size=n)


def _query_points(cfg: SimConfig, n: int) -> set[int]:
    pts = {n}
    if cfg.query_every:
        pts.update(range(cfg.query_every, n + 1, cfg.query_every))
    return pts


def run_sim(cfg: SimConfig, stream, on_step: Callable | None = None) -> RunReport:
    """Replay ``stream`` through one protocol instance.

    ``on_step(n, sites, coord, oracle)`` runs after every tuple once all of
    its messages and broadcasts have been delivered.
    """
    if len(stream) == 0:
        raise ValueError("stream is empty")
    if cfg.is_matrix != isinstance(stream, RowStream):
        want = "row" if cfg.is_matrix else "element"
        raise TypeError(f"protocol {cfg.protocol} needs an {want} stream")
    if not cfg.is_matrix and not isinstance(stream, ElementStream):
        raise TypeError("heavy-hitter protocols need an ElementStream")
    t0 = time.perf_counter()
    eps = cfg.protocol_eps
    if cfg.is_matrix:
        sites, coord = make_matrix_protocol(
            cfg.protocol, cfg.m, eps, stream.d, seed=cfg.seed, sample_size=cfg.sample_size, svd_every=cfg.svd_every
        )
        oracle = CovarianceAccumulator(stream.d)
        payloads = stream.rows
    else:
        sites, coord = make_hh_protocol(
            cfg.protocol, cfg.m, eps, seed=cfg.seed, beta=cfg.beta, sample_size=cfg.sample_size, copies=cfg.copies
        )
        oracle = ExactHHOracle()
        payloads = list(zip(stream.elements.tolist(), stream.weights.tolist()))
    assign = _assignments(cfg, stream).tolist()
    queries = _query_points(cfg, len(stream))
    tally = Tally()
    rows = []
    pending: deque = deque()
    for i, item in enumerate(payloads):
        site = sites[assign[i]]
        if cfg.is_matrix:
            oracle.add(item)
            pending.extend(site.ingest(item))
        else:
            e, w = item
            oracle.add(e, w)
            pending.extend(site.ingest(e, w))
        while pending:
            msg = pending.popleft()
            tally.record(msg, cfg.m)
            for b in coord.receive(msg):
                tally.record(b, cfg.m)
                for s in sites:
                    s.on_broadcast(b)
        n = i + 1
        if on_step is not None:
            on_step(n, sites, coord, oracle)
        if n in queries:
            rows.append(_query_row(cfg, n, coord, oracle, tally))
    config = cfg.resolved()
    config["n"] = len(stream)
    return RunReport(config, len(stream), rows, tally, coord.rounds, time.perf_counter() - t0)


def _query_row(cfg, n, coord, oracle, tally) -> dict:
    base = {"n": n}
    if cfg.is_matrix:
        base["frob_sq"] = oracle.frob_sq
        base["err"] = matrix_quality_gram(oracle, coord.gram())
        base["sketch_rows"] = int(coord.query().shape[0])
    else:
        q = hh_quality(oracle, hh_query(coord, cfg.phi, cfg.eps), cfg.phi)
        base.update(
            total=oracle.total,
            recall=q.recall,
            precision=q.precision,
            err=q.err,
            err_w=q.err_w,
            true_hh=q.true_count,
            returned=q.returned_count,
        )
    base.update(
        msg=tally.messages(cfg.m),
        up_units=tally.up_units,
        broadcasts=tally.broadcasts,
        scalars=tally.scalars(cfg.m),
        rounds=coord.rounds,
    )
    return base


def _run_one(args):
    cfg, stream = args
    return run_sim(cfg, stream)


def sweep(
    template: SimConfig,
    axis: str,
    values,
    stream_for: Callable[[SimConfig], object],
    workers: int = 1,
) -> list[RunReport]:
    """One run per value per repetition; repetition ``k`` of value ``i`` gets seed ``seed + i*reps + k``.

    ``stream_for(cfg)`` supplies the stream for each run (it may depend on
    the seed or on ``beta``).
    """
    if axis not in ("eps", "m", "beta"):
        raise ValueError(f"axis must be eps, m or beta, got {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("no sweep values")
    jobs = []
    reps = template.repetitions
    for i, v in enumerate(values):
        for k in range(reps):
            val = int(v) if axis == "m" else float(v)
            cfg = replace(template, **{axis: val}, seed=template.seed + i * reps + k)
            jobs.append((cfg, stream_for(cfg)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def sweep_csv(reports: list[RunReport], axis: str, fh=None) -> str:
    """One row per run: the swept value, its seed, and the final query row."""
    buf = io.StringIO()
    if reports:
        cfg = dict(reports[0].config)
        for k in (axis, "seed"):
            cfg.pop(k, None)
        buf.write("# config " + json.dumps(cfg, sort_keys=True) + "\n")
        fields = [axis, "seed"] + list(reports[0].final)
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow({axis: r.config[axis], "seed": r.config["seed"], **r.final})
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def budget_log(beta: float, n: int) -> float:
    return math.log2(beta * n)
