"""Customer order streams: trip-record ingestion and seeded synthetic demand.

The simulator clock runs in whole minutes, so every order is quantized to a
request minute and an integer trip duration of at least one minute. Patience
is a per-experiment constant injected here, not a per-order field read from
data files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

import numpy as np

from .seeding import substream
from .zones import ZoneNetwork

WAITING = "waiting"
SERVED = "served"
FAILED = "failed"


class DemandError(ValueError):
    """Malformed trip records or an invalid synthetic demand configuration."""


@dataclass
class Order:
    """One trip request; status advances waiting -> served or waiting -> failed."""

    id: int
    request_time: int
    source: int
    destination: int
    patience: int
    trip_duration: int
    status: str = WAITING
    pickup_time: int | None = None

    @property
    def expiry_time(self) -> int:
        """Last minute (inclusive) at which this order can still be matched."""
        return self.request_time + self.patience

    def mark_served(self, pickup_time: int) -> None:
        if self.status != WAITING:
            raise DemandError(f"order {self.id} already {self.status}")
        if not self.request_time <= pickup_time <= self.expiry_time:
            raise DemandError(
                f"pickup at {pickup_time} outside patience window "
                f"[{self.request_time}, {self.expiry_time}] of order {self.id}"
            )
        self.status = SERVED
        self.pickup_time = pickup_time

    def mark_failed(self) -> None:
        if self.status != WAITING:
            raise DemandError(f"order {self.id} already {self.status}")
        self.status = FAILED

    @property
    def waiting_time(self) -> int:
        if self.status != SERVED or self.pickup_time is None:
            raise DemandError(f"order {self.id} has no pickup; status={self.status}")
        return self.pickup_time - self.request_time


def clone_orders(orders: Sequence[Order]) -> list[Order]:
    """Fresh copies with lifecycle state reset, for a second simulation pass."""
    return [
        Order(
            id=o.id,
            request_time=o.request_time,
            source=o.source,
            destination=o.destination,
            patience=o.patience,
            trip_duration=o.trip_duration,
        )
        for o in orders
    ]


# Column names of the public Chicago taxi-trip export.
DEFAULT_COLUMNS = {
    "start_time": "Trip Start Timestamp",
    "pickup_zone": "Pickup Community Area",
    "dropoff_zone": "Dropoff Community Area",
    "trip_seconds": "Trip Seconds",
}

_TIME_FORMATS = ("%m/%d/%Y %I:%M:%S %p", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S")


@dataclass
class ParseStats:
    accepted: int = 0
    dropped_missing_zone: int = 0
    dropped_unknown_zone: int = 0
    skipped_bad_rows: int = 0


def _parse_timestamp(text: str) -> datetime:
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text.strip(), fmt)
        except ValueError:
            continue
    raise ValueError(f"unrecognized timestamp {text!r}")


def parse_trip_records(
    lines: Iterable[str],
    net: ZoneNetwork,
    patience: int,
    columns: Mapping[str, str] | None = None,
    episode_start: datetime | None = None,
) -> tuple[list[Order], ParseStats]:
    """Parse comma-separated trip records into a time-ordered order list.

    The header row must name the four required columns (configurable via
    ``columns``). Timestamps are quantized to whole minutes relative to
    ``episode_start`` (default: midnight of the earliest record's day), and
    trip seconds round up to whole minutes with a floor of one. Rows with a
    missing or unknown pickup/dropoff zone are dropped and counted; rows that
    fail to parse are skipped and counted.
    """
    cols = dict(DEFAULT_COLUMNS)
    if columns:
        cols.update(columns)

    it = iter(lines)
    try:
        header_line = next(it)
    except StopIteration:
        raise DemandError("trip-record stream is empty (no header row)") from None
    header = [h.strip() for h in header_line.rstrip("\n").split(",")]
    index: dict[str, int] = {}
    for key in ("start_time", "pickup_zone", "dropoff_zone", "trip_seconds"):
        name = cols[key]
        if name not in header:
            raise DemandError(f"required column {name!r} missing from header {header}")
        index[key] = header.index(name)

    zone_of = {ext: z for z, ext in enumerate(net.external_ids)}
    stats = ParseStats()
    raw: list[tuple[datetime, int, int, int]] = []
    for line in it:
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split(",")
        try:
            when = _parse_timestamp(fields[index["start_time"]])
            pickup_txt = fields[index["pickup_zone"]].strip()
            dropoff_txt = fields[index["dropoff_zone"]].strip()
            if not pickup_txt or not dropoff_txt:
                stats.dropped_missing_zone += 1
                continue
            pickup_ext = int(float(pickup_txt))
            dropoff_ext = int(float(dropoff_txt))
            seconds = float(fields[index["trip_seconds"]])
        except (ValueError, IndexError):
            stats.skipped_bad_rows += 1
            continue
        if pickup_ext not in zone_of or dropoff_ext not in zone_of:
            stats.dropped_unknown_zone += 1
            continue
        duration = max(1, math.ceil(seconds / 60.0))
        raw.append((when, zone_of[pickup_ext], zone_of[dropoff_ext], duration))

    if not raw:
        return [], stats

    if episode_start is None:
        earliest = min(r[0] for r in raw)
        episode_start = earliest.replace(hour=0, minute=0, second=0, microsecond=0)

    quantized = []
    for when, src, dst, duration in raw:
        minute = int((when - episode_start).total_seconds() // 60)
        if minute < 0:
            stats.skipped_bad_rows += 1
            continue
        quantized.append((minute, src, dst, duration))
    quantized.sort(key=lambda r: r[0])

    orders = [
        Order(
            id=i,
            request_time=minute,
            source=src,
            destination=dst,
            patience=int(patience),
            trip_duration=duration,
        )
        for i, (minute, src, dst, duration) in enumerate(quantized)
    ]
    stats.accepted = len(orders)
    return orders, stats


@dataclass
class DemandConfig:
    """Synthetic demand: per-zone Poisson arrivals with configured trips.

    ``rates`` gives orders/minute per zone. ``dest_probs`` gives one categorical
    row per source zone over all zones; None means uniform destinations.
    Trip durations are uniform integers in [trip_minutes_min, trip_minutes_max].
    """

    horizon: int
    rates: Sequence[float]
    patience: int
    dest_probs: Sequence[Sequence[float]] | None = None
    trip_minutes_min: int = 1
    trip_minutes_max: int = 10

    def validate(self, num_zones: int) -> None:
        if self.horizon < 0:
            raise DemandError(f"horizon must be >= 0, got {self.horizon}")
        if self.patience < 0:
            raise DemandError(f"patience must be >= 0, got {self.patience}")
        if len(self.rates) != num_zones:
            raise DemandError(f"need one rate per zone ({num_zones}), got {len(self.rates)}")
        if any(r < 0 for r in self.rates):
            raise DemandError("arrival rates must be >= 0")
        if not 1 <= self.trip_minutes_min <= self.trip_minutes_max:
            raise DemandError(
                f"trip duration range [{self.trip_minutes_min}, {self.trip_minutes_max}] invalid"
            )
        if self.dest_probs is not None:
            if len(self.dest_probs) != num_zones:
                raise DemandError("need one destination row per source zone")
            for z, row in enumerate(self.dest_probs):
                if len(row) != num_zones:
                    raise DemandError(f"destination row for zone {z} has wrong length")
                if any(p < 0 for p in row):
                    raise DemandError(f"destination row for zone {z} has negative entries")
                if abs(sum(row) - 1.0) > 1e-9:
                    raise DemandError(f"destination row for zone {z} must sum to 1")


def synth_orders(cfg: DemandConfig, net: ZoneNetwork, seed: int) -> list[Order]:
    """Generate a time-ordered order list; identical output for identical seeds."""
    n = net.num_zones
    cfg.validate(n)
    rng = substream(seed, "demand")

    rates = np.asarray(cfg.rates, dtype=float)
    counts = rng.poisson(lam=np.broadcast_to(rates, (cfg.horizon, n)))

    if cfg.dest_probs is None:
        dest_rows = np.full((n, n), 1.0 / n)
    else:
        dest_rows = np.asarray(cfg.dest_probs, dtype=float)

    records: list[tuple[int, int, int, int]] = []
    for z in range(n):
        per_minute = counts[:, z]
        total = int(per_minute.sum())
        if total == 0:
            continue
        dests = rng.choice(n, size=total, p=dest_rows[z])
        durations = rng.integers(cfg.trip_minutes_min, cfg.trip_minutes_max + 1, size=total)
        minutes = np.repeat(np.nonzero(per_minute)[0], per_minute[per_minute > 0])
        for minute, dst, dur in zip(minutes, dests, durations):
            records.append((int(minute), z, int(dst), int(dur)))

    records.sort(key=lambda r: (r[0], r[1]))
    return [
        Order(
            id=i,
            request_time=minute,
            source=src,
            destination=dst,
            patience=int(cfg.patience),
            trip_duration=dur,
        )
        for i, (minute, src, dst, dur) in enumerate(records)
    ]


class ArrivalCursor:
    """Single-pass view over a time-ordered order list.

    ``at(t)`` returns exactly the orders requesting at minute t, amortized O(1)
    per call; t must be queried in non-decreasing order.
    """

    def __init__(self, orders: Sequence[Order]):
        for prev, cur in zip(orders, orders[1:]):
            if cur.request_time < prev.request_time:
                raise DemandError("orders must be sorted by request time")
        self._orders = orders
        self._pos = 0
        self._last_t: int | None = None

    def at(self, t: int) -> list[Order]:
        if self._last_t is not None and t < self._last_t:
            raise DemandError(f"arrival cursor moved backwards: {self._last_t} -> {t}")
        self._last_t = t
        while self._pos < len(self._orders) and self._orders[self._pos].request_time < t:
            self._pos += 1
        start = self._pos
        while self._pos < len(self._orders) and self._orders[self._pos].request_time == t:
            self._pos += 1
        return list(self._orders[start : self._pos])
