"""Shared MDP state tuple and encoding dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

MINUTES_PER_DAY = 1440
DAYS_PER_WEEK = 7


class State(NamedTuple):
    """Decision-time snapshot of one vacant driver: (minute of day, day of week, zone)."""

    minute: int
    day: int
    zone: int


@dataclass(frozen=True)
class Transition:
    """One stored decision: state, action taken, reward, and next decision state.

    ``dt`` is the gap in cycles to the next decision: 1 for an unmatched move,
    the trip duration when the driver was assigned an order.
    """

    state: State
    action: int
    reward: float
    next_state: State
    dt: int = 1


@dataclass(frozen=True)
class StateDims:
    """Block widths of the one-hot state encoding."""

    zones: int
    minutes: int = MINUTES_PER_DAY
    days: int = DAYS_PER_WEEK

    @property
    def input_dim(self) -> int:
        return self.minutes + self.days + self.zones
