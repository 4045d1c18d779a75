"""Heuristic and tabular comparison policies.

All policies return action indices in the shared convention (0 = stay,
k = k-th ascending neighbor), so every returned action is feasible for the
zone it was asked about. Greedy and demand-based read a start-of-cycle
demand/supply snapshot; ties and empty snapshots degrade to staying put or a
uniform draw as documented per policy.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mdp import State, Transition
from .sim import DemandSnapshot
from .zones import ZoneNetwork, action_space


class PolicyError(ValueError):
    """Out-of-contract state or action index in a baseline policy."""


def random_policy(z: int, net: ZoneNetwork, rng: np.random.Generator) -> int:
    """Uniform draw over stay plus each neighbor."""
    return int(rng.integers(0, net.degree(z) + 1))


def greedy_policy(z: int, net: ZoneNetwork, snapshot: DemandSnapshot) -> int:
    """Move toward the candidate zone with the most waiting orders.

    Candidates are the current zone and its neighbors. If the current zone
    ties the maximum the driver stays; otherwise the tie among neighbors goes
    to the lowest zone ID (the earliest action index).
    """
    targets = action_space(net, z)
    counts = snapshot.waiting[targets]
    best = counts.max()
    if counts[0] == best:
        return 0
    return int(np.argmax(counts))


def demand_based_probs(z: int, net: ZoneNetwork, snapshot: DemandSnapshot) -> np.ndarray:
    """Selection probabilities proportional to the local demand deficit.

    Deficit is waiting orders minus vacant drivers, clamped at zero per zone;
    if every candidate is in surplus the distribution falls back to uniform.
    """
    targets = action_space(net, z)
    deficit = np.maximum(0, snapshot.waiting[targets] - snapshot.vacant[targets]).astype(float)
    total = deficit.sum()
    if total == 0:
        return np.full(len(targets), 1.0 / len(targets))
    return deficit / total


def demand_based_policy(
    z: int, net: ZoneNetwork, snapshot: DemandSnapshot, rng: np.random.Generator
) -> int:
    return int(rng.choice(net.degree(z) + 1, p=demand_based_probs(z, net, snapshot)))


class QTable:
    """State-keyed action values; one row of length deg(zone)+1 per visited state.

    Rows default to zeros and never change length once created.
    """

    def __init__(self, net: ZoneNetwork):
        self._net = net
        self._rows: dict[tuple[int, int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def row(self, s: State) -> np.ndarray:
        key = (int(s[0]), int(s[1]), int(s[2]))
        existing = self._rows.get(key)
        if existing is None:
            existing = np.zeros(self._net.degree(key[2]) + 1)
            self._rows[key] = existing
        return existing

    def max_value(self, s: State) -> float:
        key = (int(s[0]), int(s[1]), int(s[2]))
        existing = self._rows.get(key)
        return float(existing.max()) if existing is not None else 0.0

    def save(self, path: str | Path) -> None:
        """Structured-text dump of nonzero rows; floats round-trip exactly."""
        payload = {
            "version": 1,
            "rows": [
                {"state": list(key), "values": [v.hex() for v in row]}
                for key, row in sorted(self._rows.items())
                if np.any(row != 0.0)
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path, net: ZoneNetwork) -> "QTable":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("version") != 1:
            raise PolicyError(f"unsupported table checkpoint version {payload.get('version')}")
        table = cls(net)
        for entry in payload["rows"]:
            key = tuple(int(v) for v in entry["state"])
            values = np.array([float.fromhex(v) for v in entry["values"]])
            expected = net.degree(key[2]) + 1
            if values.size != expected:
                raise PolicyError(
                    f"row for state {key} has {values.size} values, zone needs {expected}"
                )
            table._rows[key] = values
        return table


def qlearning_update(table: QTable, tr: Transition, alpha_q: float, gamma: float) -> None:
    """One tabular backup toward reward + gamma * max over the next state's row."""
    row = table.row(tr.state)
    if not 0 <= tr.action < row.size:
        raise PolicyError(
            f"action {tr.action} out of range for zone {tr.state.zone} (row size {row.size})"
        )
    target = tr.reward + gamma * table.max_value(tr.next_state)
    row[tr.action] += alpha_q * (target - row[tr.action])


def qlearning_policy(
    table: QTable, s: State, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over the state's row; argmax ties go to the lowest index."""
    row = table.row(s)
    if rng.random() < epsilon:
        return int(rng.integers(0, row.size))
    return int(np.argmax(row))
