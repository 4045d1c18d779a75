"""Minute-resolution dispatch simulator over a zone network.

Each call to :meth:`Simulation.step` advances one cycle through a fixed phase
order: inject arrivals, move vacant drivers, match orders to drivers zone by
zone, expire orders whose patience ran out, release drivers whose trips end,
then advance the clock. Matching is zone-local and FIFO on both sides
(orders by request time, drivers by idle-since), with ID as the tie-break.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .demand import WAITING, ArrivalCursor, Order
from .mdp import DAYS_PER_WEEK, MINUTES_PER_DAY, State
from .zones import ZoneNetwork, resolve_action

REWARD_PER_SPARE_MINUTE = 1.0  # scale constant applied to (patience - wait)


class SimError(ValueError):
    """Contract violation while driving the simulator."""


def compute_reward(order: Order, pickup_time: int, scale: float = REWARD_PER_SPARE_MINUTE) -> float:
    """Match reward: remaining patience at pickup, times the scale constant."""
    if not order.request_time <= pickup_time <= order.expiry_time:
        raise SimError(
            f"pickup at {pickup_time} outside patience window "
            f"[{order.request_time}, {order.expiry_time}] of order {order.id}"
        )
    waited = pickup_time - order.request_time
    return (order.patience - waited) * scale


@dataclass
class Driver:
    id: int
    zone: int
    busy: bool = False
    busy_until: int | None = None
    idle_since: int = 0
    pending_dropoff: int | None = None


@dataclass(frozen=True)
class DriverRecord:
    """One vacant-driver decision: what it saw, did, earned, and lands in next."""

    driver_id: int
    state: State
    action: int
    reward: float
    next_state: State
    order_id: int | None
    dt: int  # cycles until this driver's next decision (1, or the trip duration)


@dataclass(frozen=True)
class StepOutcome:
    cycle: int
    records: tuple[DriverRecord, ...]
    expired_orders: tuple[int, ...]


@dataclass(frozen=True)
class DemandSnapshot:
    """Start-of-cycle per-zone counts, before any move or injection."""

    waiting: np.ndarray
    vacant: np.ndarray


@dataclass(frozen=True)
class MetricsReport:
    served: int
    failed: int
    total: int
    failure_rate: float | None
    avg_waiting_time: float | None
    avg_idle_search_time: float | None

    def as_row(self) -> dict:
        return {
            "failure_rate": self.failure_rate,
            "avg_waiting_time": self.avg_waiting_time,
            "avg_idle_search_time": self.avg_idle_search_time,
            "served": self.served,
            "failed": self.failed,
            "total": self.total,
        }


class Simulation:
    """Single-writer world state; mutate only through :meth:`step`."""

    def __init__(
        self,
        net: ZoneNetwork,
        orders: Sequence[Order],
        taxis_per_zone: int = 0,
        start_day: int = 0,
        driver_zones: Sequence[int] | None = None,
    ):
        if taxis_per_zone < 0:
            raise SimError(f"taxis_per_zone must be >= 0, got {taxis_per_zone}")
        if not 0 <= start_day < DAYS_PER_WEEK:
            raise SimError(f"start_day must be in [0, {DAYS_PER_WEEK}), got {start_day}")
        self.net = net
        self.start_day = start_day
        self.clock = 0
        self._cursor = ArrivalCursor(orders)

        if driver_zones is None:
            driver_zones = [z for z in net.zones for _ in range(taxis_per_zone)]
        self.drivers = []
        for i, z in enumerate(driver_zones):
            if not 0 <= z < net.num_zones:
                raise SimError(f"driver zone {z} outside the network")
            self.drivers.append(Driver(id=i, zone=z))

        self._waiting: list[list[Order]] = [[] for _ in net.zones]
        self.injected = 0
        self.served = 0
        self.failed = 0
        self._waiting_time_sum = 0
        self._idle_time_sum = 0
        self._idle_intervals = 0

    # -- observation -------------------------------------------------------

    def observe_state(self, driver_id: int) -> State:
        d = self.drivers[driver_id]
        if d.busy:
            raise SimError(f"driver {driver_id} is busy; busy drivers make no decision")
        day = (self.start_day + self.clock // MINUTES_PER_DAY) % DAYS_PER_WEEK
        return State(minute=self.clock % MINUTES_PER_DAY, day=day, zone=d.zone)

    def vacant_driver_ids(self) -> list[int]:
        return [d.id for d in self.drivers if not d.busy]

    def waiting_count(self) -> int:
        return sum(len(q) for q in self._waiting)

    def demand_snapshot(self) -> DemandSnapshot:
        waiting = np.array([len(q) for q in self._waiting], dtype=np.int64)
        vacant = np.zeros(self.net.num_zones, dtype=np.int64)
        for d in self.drivers:
            if not d.busy:
                vacant[d.zone] += 1
        return DemandSnapshot(waiting=waiting, vacant=vacant)

    # -- dynamics ----------------------------------------------------------

    def step(self, actions: Mapping[int, int]) -> StepOutcome:
        vacant_ids = self.vacant_driver_ids()
        for did in actions:
            if not 0 <= did < len(self.drivers):
                raise SimError(f"unknown driver {did} in action map")
            if self.drivers[did].busy:
                raise SimError(f"driver {did} is busy and must not appear in the action map")
        missing = [did for did in vacant_ids if did not in actions]
        if missing:
            raise SimError(f"vacant drivers {missing} have no action this cycle")

        cycle = self.clock
        day = (self.start_day + cycle // MINUTES_PER_DAY) % DAYS_PER_WEEK
        minute = cycle % MINUTES_PER_DAY

        # (1) inject arrivals, FIFO by request time then ID
        arrivals = sorted(self._cursor.at(cycle), key=lambda o: (o.request_time, o.id))
        for o in arrivals:
            self._waiting[o.source].append(o)
        self.injected += len(arrivals)

        # (2) move vacant drivers; raises on a blocked action index
        decided: list[tuple[Driver, State, int]] = []
        for did in vacant_ids:
            d = self.drivers[did]
            s = State(minute=minute, day=day, zone=d.zone)
            a = actions[did]
            d.zone = resolve_action(self.net, d.zone, a)
            decided.append((d, s, a))

        # (3) zone-local matching: order FIFO by request time, driver FIFO by idle-since
        matches: dict[int, Order] = {}
        idle_pool: list[list[Driver]] = [[] for _ in self.net.zones]
        for d, _, _ in decided:
            idle_pool[d.zone].append(d)
        for z in self.net.zones:
            queue = self._waiting[z]
            if not queue:
                continue
            candidates = sorted(idle_pool[z], key=lambda d: (d.idle_since, d.id))
            n = min(len(queue), len(candidates))
            for o, d in zip(queue[:n], candidates[:n]):
                o.mark_served(cycle)
                self.served += 1
                self._waiting_time_sum += o.waiting_time
                self._idle_time_sum += cycle - d.idle_since
                self._idle_intervals += 1
                d.busy = True
                d.busy_until = cycle + o.trip_duration
                d.pending_dropoff = o.destination
                matches[d.id] = o
            del queue[:n]

        # (3)+(4) per-driver records: matched get the trip reward, others zero
        records = []
        for d, s, a in decided:
            o = matches.get(d.id)
            if o is not None:
                reward = compute_reward(o, cycle)
                next_state = State(
                    minute=(cycle + o.trip_duration) % MINUTES_PER_DAY,
                    day=day,
                    zone=o.destination,
                )
                records.append(
                    DriverRecord(d.id, s, a, reward, next_state, o.id, o.trip_duration)
                )
            else:
                next_state = State(minute=(cycle + 1) % MINUTES_PER_DAY, day=day, zone=d.zone)
                records.append(DriverRecord(d.id, s, a, 0.0, next_state, None, 1))

        # (5) expire orders whose full patience window has now passed
        expired: list[int] = []
        for z in self.net.zones:
            queue = self._waiting[z]
            if not queue:
                continue
            keep = []
            for o in queue:
                if o.expiry_time == cycle:
                    o.mark_failed()
                    self.failed += 1
                    expired.append(o.id)
                else:
                    keep.append(o)
            self._waiting[z] = keep

        # (6) finish trips ending next minute; driver idles at the dropoff zone
        for d in self.drivers:
            if d.busy and d.busy_until == cycle + 1:
                d.busy = False
                d.zone = d.pending_dropoff
                d.idle_since = d.busy_until
                d.busy_until = None
                d.pending_dropoff = None

        # (7) advance
        self.clock = cycle + 1
        return StepOutcome(cycle=cycle, records=tuple(records), expired_orders=tuple(expired))

    # -- reporting ---------------------------------------------------------

    def metrics(self) -> MetricsReport:
        decided = self.served + self.failed
        return MetricsReport(
            served=self.served,
            failed=self.failed,
            total=decided,
            failure_rate=(self.failed / decided) if decided > 0 else None,
            avg_waiting_time=(self._waiting_time_sum / self.served) if self.served > 0 else None,
            avg_idle_search_time=(
                self._idle_time_sum / self._idle_intervals if self._idle_intervals > 0 else None
            ),
        )


def event_records(outcomes: Iterable[StepOutcome]) -> list[dict]:
    """Flatten step outcomes into one record per (cycle, driver, action, reward, match)."""
    rows = []
    for outcome in outcomes:
        for rec in outcome.records:
            rows.append(
                {
                    "cycle": outcome.cycle,
                    "driver": rec.driver_id,
                    "action": rec.action,
                    "reward": rec.reward,
                    "match": rec.order_id,
                }
            )
    return rows


def write_event_log(path, outcomes: Iterable[StepOutcome]) -> None:
    """Line-delimited JSON event log; one object per driver decision."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in event_records(outcomes):
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_event_log(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
