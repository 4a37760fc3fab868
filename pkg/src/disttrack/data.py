"""Stream generation and ingestion.

Element streams are weighted Zipfian draws; matrix streams are synthetic
rows or rows read from CSV.  Every generator is a pure function of its
configuration, so a stream can be replayed from its seed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, NamedTuple, Sequence

import numpy as np


class StreamTuple(NamedTuple):
    seq: int
    payload: Any
    site_hint: int | None = None


@dataclass(frozen=True)
class ZipfConfig:
    n: int
    universe: int = 10_000
    skew: float = 2.0
    beta: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"n must be a non-negative integer, got {self.n!r}")
        if int(self.universe) != self.universe or self.universe < 1:
            raise ValueError(f"universe must be a positive integer, got {self.universe!r}")
        if not self.skew > 0:
            raise ValueError(f"skew must be positive, got {self.skew!r}")
        if not (self.beta >= 1 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be a finite real >= 1, got {self.beta!r}")


class ElementStream:
    """Weighted element stream backed by two arrays."""

    kind = "elements"

    def __init__(self, elements, weights, site_hints=None):
        self.elements = np.asarray(elements)
        self.weights = np.asarray(weights, dtype=float)
        if self.elements.shape != self.weights.shape or self.elements.ndim != 1:
            raise ValueError("elements and weights must be 1-d arrays of equal length")
        if self.weights.size and not (np.all(np.isfinite(self.weights)) and self.weights.min() > 0):
            raise ValueError("weights must be positive and finite")
        self.site_hints = None if site_hints is None else np.asarray(site_hints, dtype=np.int64)

    def __len__(self) -> int:
        return self.elements.shape[0]

    def __iter__(self) -> Iterator[StreamTuple]:
        hints = self.site_hints
        for i, (e, w) in enumerate(zip(self.elements.tolist(), self.weights.tolist())):
            yield StreamTuple(i + 1, (e, w), None if hints is None else int(hints[i]))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def beta(self) -> float:
        return float(self.weights.max()) if len(self) else 0.0

    def head(self, n: int) -> "ElementStream":
        hints = None if self.site_hints is None else self.site_hints[:n]
        return ElementStream(self.elements[:n], self.weights[:n], hints)


class RowStream:
    """Matrix row stream; a row's weight is its squared norm."""

    kind = "rows"

    def __init__(self, rows, site_hints=None):
        self.rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if self.rows.ndim != 2:
            raise ValueError("rows must form a 2-d array")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("rows must be finite")
        self.site_hints = None if site_hints is None else np.asarray(site_hints, dtype=np.int64)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __iter__(self) -> Iterator[StreamTuple]:
        hints = self.site_hints
        for i, r in enumerate(self.rows):
            yield StreamTuple(i + 1, r, None if hints is None else int(hints[i]))

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def beta(self) -> float:
        """Empirical largest squared row norm."""
        return float(np.einsum("ij,ij->i", self.rows, self.rows).max()) if len(self) else 0.0

    def head(self, n: int) -> "RowStream":
        hints = None if self.site_hints is None else self.site_hints[:n]
        return RowStream(self.rows[:n], hints)


def zipf_pmf(universe: int, skew: float) -> np.ndarray:
    """Probabilities of elements ``1..universe``."""
    p = np.arange(1, universe + 1, dtype=float) ** -skew
    return p / p.sum()


def gen_zipfian(cfg: ZipfConfig) -> ElementStream:
    """Elements ``1..u`` with mass ``k^-skew``; each occurrence gets a fresh weight in ``[1, beta]``."""
    rng = np.random.default_rng(cfg.seed)
    cdf = np.cumsum(zipf_pmf(cfg.universe, cfg.skew))
    cdf[-1] = 1.0
    u = rng.random(cfg.n)
    elements = np.searchsorted(cdf, u, side="right") + 1
    np.minimum(elements, cfg.universe, out=elements)
    weights = rng.uniform(1.0, cfg.beta, cfg.n) if cfg.beta > 1 else np.ones(cfg.n)
    return ElementStream(elements.astype(np.int64), weights)


def synth_matrix(
    kind: str,
    n: int,
    d: int,
    rank: int = 20,
    noise: float = 0.1,
    seed: int = 0,
) -> RowStream:
    """Synthetic rows.

    ``lowrank``: Gaussian combinations of ``rank`` fixed Gaussian directions
    plus isotropic noise of scale ``noise``.  ``highrank``: iid standard
    Gaussian rows.  ``rotating``: rows sweep slowly around a random plane, so
    the dominant direction keeps changing.
    """
    if int(n) != n or n < 1 or int(d) != d or d < 1:
        raise ValueError(f"n and d must be positive integers, got n={n!r}, d={d!r}")
    if noise < 0:
        raise ValueError(f"noise must be non-negative, got {noise!r}")
    rng = np.random.default_rng(seed)
    if kind == "lowrank":
        if not 1 <= rank <= d:
            raise ValueError(f"rank must lie in [1, d={d}], got {rank!r}")
        dirs = rng.standard_normal((rank, d))
        coef = rng.standard_normal((n, rank))
        rows = coef @ dirs
        if noise > 0:
            rows += noise * rng.standard_normal((n, d))
    elif kind == "highrank":
        rows = rng.standard_normal((n, d))
    elif kind == "rotating":
        if d < 2:
            raise ValueError("rotating rows need d >= 2")
        basis, _ = np.linalg.qr(rng.standard_normal((d, 2)))
        angle = np.linspace(0.0, math.pi, n, endpoint=False)
        rows = np.cos(angle)[:, None] * basis[:, 0] + np.sin(angle)[:, None] * basis[:, 1]
        rows *= 10.0
        if noise > 0:
            rows += noise * rng.standard_normal((n, d))
    else:
        raise ValueError(f"unknown matrix kind {kind!r}; expected lowrank, highrank or rotating")
    return RowStream(rows)


def _parse_line(fields: Sequence[str], lineno: int, path) -> list[float]:
    out = []
    for k, f in enumerate(fields):
        try:
            out.append(float(f))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: field {k + 1} is not numeric: {f.strip()!r}") from None
    return out


def load_matrix_csv(path, columns: Sequence[int] | None = None, header: bool = False) -> RowStream:
    """Read one row per line; ``columns`` keeps only the listed 0-based fields."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not fields or all(not f.strip() for f in fields):
                continue
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, found {len(fields)}")
            if columns is not None:
                try:
                    fields = [fields[c] for c in columns]
                except IndexError:
                    raise ValueError(f"{path}:{lineno}: column selection {list(columns)} out of range") from None
            vals = _parse_line(fields, lineno, path)
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return RowStream(np.array(rows))


def load_element_csv(path, header: bool = False) -> ElementStream:
    """Read ``element,weight[,site]`` lines.  Integer-looking labels become ints."""
    elements, weights, hints = [], [], []
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected element,weight[,site], found {len(fields)} fields")
            label = fields[0].strip()
            try:
                label = int(label)
            except ValueError:
                pass
            (w,) = _parse_line(fields[1:2], lineno, path)
            if not (w > 0 and math.isfinite(w)):
                raise ValueError(f"{path}:{lineno}: weight must be positive and finite, got {w!r}")
            elements.append(label)
            weights.append(w)
            if len(fields) == 3:
                hints.append(int(_parse_line(fields[2:3], lineno, path)[0]))
    if not elements:
        raise ValueError(f"{path}: no data rows")
    if hints and len(hints) != len(elements):
        raise ValueError(f"{path}: site column present on some lines only")
    arr = np.array(elements) if all(isinstance(e, int) for e in elements) else np.array(elements, dtype=object)
    return ElementStream(arr, weights, hints or None)


def dump_stream(stream, path) -> Path:
    """Write a stream as CSV, or as ``.npz`` when the suffix asks for it."""
    path = Path(path)
    if path.suffix == ".npz":
        if isinstance(stream, RowStream):
            np.savez(path, rows=stream.rows)
        else:
            np.savez(path, elements=stream.elements, weights=stream.weights)
        return path
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(stream, RowStream):
            for r in stream.rows:
                w.writerow([repr(float(x)) for x in r])
        else:
            hints = stream.site_hints
            for i, (e, x) in enumerate(zip(stream.elements.tolist(), stream.weights.tolist())):
                w.writerow([e, repr(float(x))] if hints is None else [e, repr(float(x)), int(hints[i])])
    return path


def load_stream(path, header: bool = False, columns: Sequence[int] | None = None, kind: str | None = None):
    """Load either stream type; ``kind`` is ``elements`` or ``rows`` (guessed from ``.npz`` contents)."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            if "rows" in z:
                return RowStream(z["rows"])
            return ElementStream(z["elements"], z["weights"])
    if kind == "elements":
        return load_element_csv(path, header)
    if kind == "rows":
        return load_matrix_csv(path, columns, header)
    raise ValueError("kind must be 'elements' or 'rows' for CSV input")
