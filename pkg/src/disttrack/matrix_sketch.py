"""Frequent Directions sketch and exact covariance bookkeeping.

``FrequentDirections`` keeps at most ``ell`` rows ``B`` such that for every
unit vector ``x``::

    0 <= |Ax|^2 - |Bx|^2 <= 2 |A|_F^2 / ell

The shrink step subtracts the ``ell``-th largest squared singular value from
all squared singular values, so at least one row becomes zero.
"""
from __future__ import annotations

import math

import numpy as np


def _as_row(row, d: int | None = None) -> np.ndarray:
    a = np.asarray(row, dtype=float).ravel()
    if d is not None and a.shape[0] != d:
        raise ValueError(f"row has dimension {a.shape[0]}, expected {d}")
    if not np.all(np.isfinite(a)):
        raise ValueError("row has non-finite entries")
    return a


def shrink_rows(rows: np.ndarray, ell: int) -> np.ndarray:
    """Return ``ΣV^T`` of ``rows`` after subtracting ``σ_ell^2`` from all ``σ^2``."""
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    sq = s * s
    delta = sq[ell - 1] if sq.shape[0] >= ell else 0.0
    sq = sq - delta
    keep = sq > 0.0
    return np.sqrt(sq[keep])[:, None] * vt[keep]


class FrequentDirections:
    """Mergeable Frequent Directions sketch with ``ell`` rows over ``d`` columns.

    ``frob_sq`` is the exact squared Frobenius norm of everything fed in,
    including rows received through merges.
    """

    def __init__(self, ell: int, d: int):
        if int(ell) != ell or ell < 1:
            raise ValueError(f"ell must be a positive integer, got {ell!r}")
        if int(d) != d or d < 1:
            raise ValueError(f"d must be a positive integer, got {d!r}")
        self.ell = int(ell)
        self.d = int(d)
        self._buf = np.zeros((self.ell + 1, self.d))
        self._n = 0
        self._gram: np.ndarray | None = None
        self.frob_sq = 0.0
        self.shrinks = 0

    @classmethod
    def for_error(cls, eps: float, d: int) -> "FrequentDirections":
        """Sketch sized so the covariance error is at most ``eps |A|_F^2``."""
        if not 0.0 < eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {eps!r}")
        return cls(math.ceil(2.0 / eps - 1e-9), d)

    def __len__(self) -> int:
        return self._n

    def __repr__(self) -> str:
        return f"FrequentDirections(ell={self.ell}, d={self.d}, rows={self._n}, frob_sq={self.frob_sq:g})"

    @property
    def rows(self) -> np.ndarray:
        """Current sketch ``B`` (a copy)."""
        return self._buf[: self._n].copy()

    def gram(self) -> np.ndarray:
        """``B^T B``, cached between shrinks."""
        if self._gram is None:
            b = self._buf[: self._n]
            self._gram = b.T @ b
        return self._gram

    def copy(self) -> "FrequentDirections":
        out = FrequentDirections(self.ell, self.d)
        out._buf[: self._n] = self._buf[: self._n]
        out._n = self._n
        out.frob_sq = self.frob_sq
        out.shrinks = self.shrinks
        return out

    def clear(self) -> None:
        self._n = 0
        self._gram = None
        self.frob_sq = 0.0

    def update(self, row) -> "FrequentDirections":
        a = _as_row(row, self.d)
        self._buf[self._n] = a
        self._n += 1
        self.frob_sq += float(a @ a)
        if self._gram is not None:
            self._gram += np.outer(a, a)
        if self._n > self.ell:
            self.shrinks += 1
            self._set(shrink_rows(self._buf[: self._n], self.ell))
        return self

    def extend(self, rows) -> "FrequentDirections":
        for a in np.atleast_2d(np.asarray(rows, dtype=float)):
            self.update(a)
        return self

    def merge(self, other: "FrequentDirections") -> "FrequentDirections":
        """Fold ``other`` into this sketch in place."""
        if other.d != self.d:
            raise ValueError(f"dimension mismatch: {self.d} vs {other.d}")
        if other.ell != self.ell:
            raise ValueError(f"ell mismatch: {self.ell} vs {other.ell}")
        self._absorb(other._buf[: other._n], other.frob_sq)
        return self

    def merge_rows(self, rows: np.ndarray, frob_sq: float | None = None) -> "FrequentDirections":
        """Merge a raw block of sketch rows that represent ``frob_sq`` input mass."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float)).reshape(-1, self.d)
        if frob_sq is None:
            frob_sq = float(np.sum(rows * rows))
        self._absorb(rows, frob_sq)
        return self

    def _absorb(self, rows: np.ndarray, frob_sq: float) -> None:
        self.frob_sq += float(frob_sq)
        if rows.shape[0] == 0:
            return
        stacked = np.vstack([self._buf[: self._n], rows])
        if stacked.shape[0] > self.ell:
            self.shrinks += 1
            stacked = shrink_rows(stacked, self.ell)
        self._set(stacked)

    def _set(self, rows: np.ndarray) -> None:
        k = rows.shape[0]
        self._buf[:k] = rows
        self._n = k
        self._gram = None

    def error_bound(self) -> float:
        return 2.0 * self.frob_sq / self.ell


def fd_update(sk: FrequentDirections, row) -> FrequentDirections:
    return sk.copy().update(row)


def fd_merge(a: FrequentDirections, b: FrequentDirections) -> FrequentDirections:
    return a.copy().merge(b)


class CovarianceAccumulator:
    """Exact ``A^T A`` and ``|A|_F^2`` accumulated row by row."""

    def __init__(self, d: int):
        self.d = int(d)
        self.gram = np.zeros((self.d, self.d))
        self.frob_sq = 0.0
        self.rows = 0

    def add(self, row) -> None:
        a = _as_row(row, self.d)
        self.gram += np.outer(a, a)
        self.frob_sq += float(a @ a)
        self.rows += 1

    def add_rows(self, rows) -> None:
        a = np.atleast_2d(np.asarray(rows, dtype=float))
        if a.shape[1] != self.d:
            raise ValueError(f"rows have dimension {a.shape[1]}, expected {self.d}")
        self.gram += a.T @ a
        self.frob_sq += float(np.sum(a * a))
        self.rows += a.shape[0]

    @classmethod
    def of(cls, rows) -> "CovarianceAccumulator":
        a = np.atleast_2d(np.asarray(rows, dtype=float))
        acc = cls(a.shape[1])
        acc.add_rows(a)
        return acc


def _gram_of(b, d: int) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        return np.zeros((d, d))
    b = np.atleast_2d(b)
    if b.shape[1] != d:
        raise ValueError(f"sketch has {b.shape[1]} columns, expected {d}")
    return b.T @ b


def covariance_error(ref: CovarianceAccumulator, b) -> float:
    """``|A^T A - B^T B|_2 / |A|_F^2`` by dense symmetric eigendecomposition."""
    return covariance_error_gram(ref, _gram_of(b, ref.d))


def covariance_error_gram(ref: CovarianceAccumulator, b_gram: np.ndarray) -> float:
    if ref.frob_sq <= 0.0:
        raise ValueError("covariance error is undefined for an all-zero input")
    diff = ref.gram - b_gram
    ev = np.linalg.eigvalsh((diff + diff.T) / 2.0)
    return float(max(abs(ev[0]), abs(ev[-1])) / ref.frob_sq)


def directional_gap(ref: CovarianceAccumulator, b, xs: np.ndarray) -> np.ndarray:
    """``|Ax|^2 - |Bx|^2`` for each row ``x`` of ``xs`` (rows need not be unit)."""
    g = ref.gram - _gram_of(b, ref.d)
    xs = np.atleast_2d(xs)
    return np.einsum("ij,jk,ik->i", xs, g, xs)
