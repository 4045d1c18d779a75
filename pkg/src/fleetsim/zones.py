"""Zone network: undirected adjacency, per-zone action spaces, and action masks.

Zones are remapped to dense 0-based indices at load time; original external
IDs are kept for reporting. The action convention is fixed everywhere in the
package: index 0 means stay in the current zone, indices 1..deg(z) point at
the neighbors of z in ascending zone-ID order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ZoneError(ValueError):
    """Malformed network input or an out-of-contract zone/action reference."""


@dataclass(frozen=True)
class ZoneNetwork:
    """Immutable undirected zone graph over dense zone IDs 0..n-1."""

    adjacency: tuple[tuple[int, ...], ...]
    external_ids: tuple[int, ...]

    @property
    def num_zones(self) -> int:
        return len(self.adjacency)

    @property
    def zones(self) -> range:
        return range(self.num_zones)

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        pairs = set()
        for z, nbrs in enumerate(self.adjacency):
            for w in nbrs:
                pairs.add((min(z, w), max(z, w)))
        return frozenset(pairs)

    def degree(self, z: int) -> int:
        self._check_zone(z)
        return len(self.adjacency[z])

    def neighbors(self, z: int) -> tuple[int, ...]:
        self._check_zone(z)
        return self.adjacency[z]

    def _check_zone(self, z: int) -> None:
        if not 0 <= z < self.num_zones:
            raise ZoneError(f"unknown zone ID {z} (network has {self.num_zones} zones)")


@dataclass(frozen=True)
class ActionMask:
    """Per-zone feasibility flags over the fixed-width action head.

    Entries 0..deg(z) pass (stay plus each neighbor); the padding tail up to
    the network-wide head width blocks. Blocked q-values are overwritten with
    -inf before any max/argmax rather than multiplied, so negative or zero
    q-values cannot leak through the mask.
    """

    zone: int
    passable: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        flags = np.asarray(self.passable, dtype=bool)
        flags.setflags(write=False)
        object.__setattr__(self, "passable", flags)

    def __len__(self) -> int:
        return self.passable.size

    @property
    def num_pass(self) -> int:
        return int(self.passable.sum())


def load_network(
    edge_list: Iterable[tuple[int, int]],
    extra_zones: Iterable[int] = (),
) -> ZoneNetwork:
    """Build a ZoneNetwork from unordered external-ID pairs.

    ``extra_zones`` declares zones that appear in no edge (isolated zones are
    permitted; their only action is stay). Self-loops and negative IDs are
    rejected; duplicate pairs collapse to one edge.
    """
    ids: set[int] = set()
    pairs: set[tuple[int, int]] = set()
    for a, b in edge_list:
        a, b = int(a), int(b)
        if a < 0 or b < 0:
            raise ZoneError(f"zone IDs must be non-negative, got ({a}, {b})")
        if a == b:
            raise ZoneError(f"self-loop edge ({a}, {b}) is not allowed")
        ids.update((a, b))
        pairs.add((min(a, b), max(a, b)))
    for z in extra_zones:
        z = int(z)
        if z < 0:
            raise ZoneError(f"zone IDs must be non-negative, got {z}")
        ids.add(z)
    if not ids:
        raise ZoneError("network must contain at least one zone")

    external = tuple(sorted(ids))
    dense = {ext: i for i, ext in enumerate(external)}
    adj: list[set[int]] = [set() for _ in external]
    for a, b in pairs:
        adj[dense[a]].add(dense[b])
        adj[dense[b]].add(dense[a])
    return ZoneNetwork(
        adjacency=tuple(tuple(sorted(nbrs)) for nbrs in adj),
        external_ids=external,
    )


def load_network_file(path: str | Path) -> ZoneNetwork:
    """Parse an edge-list file: one ``zone_a,zone_b`` pair per line.

    ``#`` starts a comment; blank lines are skipped. A line holding a single
    zone ID declares an isolated zone.
    """
    edges: list[tuple[int, int]] = []
    singles: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            try:
                if len(fields) == 1:
                    singles.append(int(fields[0]))
                elif len(fields) == 2:
                    edges.append((int(fields[0]), int(fields[1])))
                else:
                    raise ValueError("expected 1 or 2 comma-separated zone IDs")
            except ValueError as exc:
                raise ZoneError(f"{path}:{lineno}: malformed edge record {line!r}: {exc}") from exc
    try:
        return load_network(edges, extra_zones=singles)
    except ZoneError as exc:
        raise ZoneError(f"{path}: {exc}") from exc


def action_space(net: ZoneNetwork, z: int) -> list[int]:
    """Ordered action targets for zone z: [z, then neighbors ascending]."""
    return [z, *net.neighbors(z)]


def max_degree(net: ZoneNetwork) -> int:
    if net.num_zones == 0:
        raise ZoneError("empty network has no maximum degree")
    return max(len(nbrs) for nbrs in net.adjacency)


def head_width(net: ZoneNetwork) -> int:
    """Width of the shared action head: max_degree + 1."""
    return max_degree(net) + 1


def build_action_mask(net: ZoneNetwork, z: int) -> ActionMask:
    width = head_width(net)
    flags = np.zeros(width, dtype=bool)
    flags[: net.degree(z) + 1] = True
    return ActionMask(zone=z, passable=flags)


def build_all_masks(net: ZoneNetwork) -> list[ActionMask]:
    return [build_action_mask(net, z) for z in net.zones]


def resolve_action(net: ZoneNetwork, z: int, a: int) -> int:
    """Map a pass action index to its target zone (0 = stay, k = k-th neighbor).

    A blocked index is a hard error: it signals a masking bug upstream, never
    a recoverable condition.
    """
    targets = action_space(net, z)
    if not 0 <= a < len(targets):
        raise ZoneError(
            f"action {a} is blocked for zone {z} (degree {net.degree(z)}); "
            "masked actions must never reach resolve_action"
        )
    return targets[a]


def parse_edge_pairs(lines: Sequence[str]) -> list[tuple[int, int]]:
    """Edge pairs from in-memory text lines (same grammar as the file loader)."""
    edges = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 2:
            raise ZoneError(f"line {lineno}: malformed edge record {line!r}")
        try:
            edges.append((int(fields[0]), int(fields[1])))
        except ValueError as exc:
            raise ZoneError(f"line {lineno}: malformed edge record {line!r}") from exc
    return edges
