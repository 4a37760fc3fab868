"""Exact oracles and quality metrics."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np

from .matrix_sketch import CovarianceAccumulator, covariance_error, covariance_error_gram


class ExactHHOracle:
    """Exact per-element weights, accumulated as the stream goes by."""

    def __init__(self):
        self.freq: dict = defaultdict(float)
        self.total = 0.0

    def add(self, e: Hashable, w: float) -> None:
        self.freq[e] += w
        self.total += w

    def add_many(self, elements, weights) -> None:
        for e, w in zip(elements, weights):
            self.freq[e] += w
            self.total += w

    def heavy_hitters(self, phi: float) -> set:
        cut = phi * self.total
        return {e for e, f in self.freq.items() if f >= cut}

    def frequency(self, e: Hashable) -> float:
        return self.freq.get(e, 0.0)


@dataclass
class HHQualityReport:
    recall: float
    precision: float
    err: float
    err_w: float
    true_count: int
    returned_count: int


def hh_quality(oracle: ExactHHOracle, returned: Iterable[tuple], phi: float) -> HHQualityReport:
    """Score a returned list of ``(element, estimate)``.

    ``err`` is the mean of ``|est - f|/f`` over true heavy hitters that were
    returned; ``err_w`` is the largest ``|est - f|/W`` over the same set.
    Empty true or returned sets score recall or precision 1.
    """
    if oracle.total <= 0:
        raise ValueError("total weight must be positive")
    truth = oracle.heavy_hitters(phi)
    ret = dict(returned)
    hit = [e for e in ret if e in truth]
    recall = len(hit) / len(truth) if truth else 1.0
    precision = len(hit) / len(ret) if ret else 1.0
    rel = [abs(ret[e] - oracle.freq[e]) / oracle.freq[e] for e in hit]
    err = float(np.mean(rel)) if rel else 0.0
    err_w = max((abs(ret[e] - oracle.freq[e]) for e in hit), default=0.0) / oracle.total
    return HHQualityReport(recall, precision, err, err_w, len(truth), len(ret))


def matrix_quality(acc: CovarianceAccumulator, b) -> float:
    return covariance_error(acc, b)


def matrix_quality_gram(acc: CovarianceAccumulator, b_gram: np.ndarray) -> float:
    return covariance_error_gram(acc, b_gram)
