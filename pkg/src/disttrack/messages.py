"""Typed messages exchanged between sites and the coordinator."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

COORDINATOR = -1


class Kind(str, Enum):
    # heavy hitters
    SUMMARY = "summary_and_weight"
    TOTAL = "total_weight"
    ELEMENT_DELTA = "element_delta"
    PRIORITY_SAMPLE = "priority_sample"
    PRIORITY_DRAWS = "priority_draws"
    COUNT_SNAPSHOT = "count_snapshot"
    BROADCAST_W = "broadcast_w"
    BROADCAST_TAU = "broadcast_tau"
    # matrices
    SKETCH_AND_NORM = "sketch_and_norm"
    NORM_ONLY = "norm_only"
    DIRECTION = "direction"
    SAMPLED_ROW = "sampled_row"
    SAMPLED_ROW_DRAWS = "sampled_row_draws"
    SINGULAR_SNAPSHOT = "singular_snapshot"
    BROADCAST_F = "broadcast_f"

    def __str__(self) -> str:
        return self.value


BROADCASTS = frozenset({Kind.BROADCAST_W, Kind.BROADCAST_TAU, Kind.BROADCAST_F})


@dataclass(slots=True)
class Message:
    """One transmission.

    ``units`` is how many protocol messages the transmission stands for in the
    message tally: one per element counter or row carried by a summary, one
    per forwarded sampler draw, one otherwise.  ``scalars`` is the payload
    size in scalars.  A broadcast is a single ``Message`` that the simulator
    charges ``m`` times.
    """

    kind: Kind
    origin: int
    body: Any
    scalars: int
    units: int = 1
    heavy: bool = False

    @property
    def is_broadcast(self) -> bool:
        return self.kind in BROADCASTS


def broadcast(kind: Kind, value: float) -> Message:
    return Message(kind, COORDINATOR, value, 1)
