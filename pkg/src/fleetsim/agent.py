"""Masked deep-Q agent: replay buffer, annealed exploration, training loop.

Exploration follows a simulated-annealing schedule: the probability of a
random (pass-only) action starts at 1 and decays toward a floor epsilon as
the global cycle count grows. Every vacant driver shares one policy network;
each decision is stored as a transition and every driver's turn contributes
one sampled minibatch to a single SGD application per cycle. The target
network is synchronized on a fixed cycle period.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import State, Transition
from .qnet import QNetError, QNetwork, encode_indices, masked_max, masked_max_rows
from .qnet import sgd_step_onehot
from .qnet import td_target as _td_target_raw
from .sim import Simulation, StepOutcome
from .zones import ActionMask, build_all_masks


class AgentError(ValueError):
    """Contract violation in buffer handling or training configuration."""


@dataclass
class Hyperparams:
    gamma: float = 0.99
    alpha: float = 1e-6
    replay_capacity: int = 10_000
    minibatch: int = 32
    sync_period: int = 10_000
    epsilon: float = 0.1
    anneal_tau: float = 20.0
    max_cycles: int = 1440
    discount_by_trip_duration: bool = False  # reserved: gamma**dt over matched jumps

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise AgentError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise AgentError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.anneal_tau <= 0:
            raise AgentError(f"anneal_tau must be > 0, got {self.anneal_tau}")
        if self.alpha < 0:
            raise AgentError(f"alpha must be >= 0, got {self.alpha}")
        if self.replay_capacity < 1:
            raise AgentError(f"replay_capacity must be >= 1, got {self.replay_capacity}")
        if self.minibatch < 1:
            raise AgentError(f"minibatch must be >= 1, got {self.minibatch}")
        if self.sync_period < 1:
            raise AgentError(f"sync_period must be >= 1, got {self.sync_period}")
        if self.max_cycles < 0:
            raise AgentError(f"max_cycles must be >= 0, got {self.max_cycles}")


class ReplayBuffer:
    """Bounded FIFO of transitions; insertion beyond capacity evicts the oldest."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise AgentError(f"capacity must be >= 1, got {capacity}")
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def capacity(self) -> int:
        return self._items.maxlen

    def push(self, tr: Transition) -> None:
        self._items.append(tr)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        """n uniform draws, without replacement when the buffer is large enough."""
        if n < 1:
            raise AgentError(f"minibatch size must be >= 1, got {n}")
        if len(self._items) == 0:
            raise AgentError("cannot sample from an empty replay buffer")
        replacing = len(self._items) < n
        picks = rng.choice(len(self._items), size=n, replace=replacing)
        return [self._items[i] for i in picks]

    def snapshot(self) -> tuple[Transition, ...]:
        return tuple(self._items)


def anneal_threshold(t: int, epsilon: float, tau: float) -> float:
    """Exploration probability at cycle t: epsilon + (1 - epsilon) * exp(-t / tau)."""
    if t < 0:
        raise AgentError(f"cycle must be >= 0, got {t}")
    return epsilon + (1.0 - epsilon) * math.exp(-t / tau)


def _select(
    state: State,
    net: QNetwork,
    mask: ActionMask,
    threshold: float,
    rng: np.random.Generator,
) -> int:
    if mask.zone != state.zone:
        raise AgentError(f"mask for zone {mask.zone} used with state in zone {state.zone}")
    if rng.random() > threshold:
        q = net.forward_onehot(np.array(encode_indices(state, net.dims)))
        _, idx = masked_max(q, mask)
        return idx
    return int(rng.integers(0, mask.num_pass))


def select_action(
    state: State,
    net: QNetwork,
    mask: ActionMask,
    t: int,
    rng: np.random.Generator,
    epsilon: float = 0.1,
    tau: float = 20.0,
) -> int:
    """Annealed selection: random pass action early, masked argmax as t grows."""
    return _select(state, net, mask, anneal_threshold(t, epsilon, tau), rng)


def select_action_frozen(
    state: State,
    net: QNetwork,
    mask: ActionMask,
    rng: np.random.Generator,
    epsilon: float = 0.1,
) -> int:
    """Evaluation-time selection with the exploration floor only."""
    return _select(state, net, mask, epsilon, rng)


def td_target(tr: Transition, target_net: QNetwork, m_next: ActionMask, gamma: float) -> float:
    """Bootstrap target for one transition using the next state's own zone mask."""
    return _td_target_raw(tr.reward, tr.next_state, target_net, m_next, gamma)


def sync_target(policy: QNetwork, target: QNetwork) -> None:
    """Overwrite the target parameters with the policy parameters, value-exact."""
    for (name, src), (_, dst) in zip(policy.parameters(), target.parameters()):
        if src.shape != dst.shape:
            raise QNetError(f"parameter {name} shape mismatch: {src.shape} vs {dst.shape}")
    for (_, src), (_, dst) in zip(policy.parameters(), target.parameters()):
        np.copyto(dst, src)


@dataclass
class CycleTrace:
    cycle: int
    loss: float | None
    cumulative_reward: float
    buffer_size: int


@dataclass
class TrainResult:
    policy: QNetwork
    target: QNetwork
    curves: list[CycleTrace] = field(default_factory=list)
    outcomes: list[StepOutcome] = field(default_factory=list)


def write_curves(path, curves: list[CycleTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cycle,mean_loss,cumulative_reward,buffer_size\n")
        for c in curves:
            loss = "" if c.loss is None else repr(c.loss)
            fh.write(f"{c.cycle},{loss},{repr(c.cumulative_reward)},{c.buffer_size}\n")


def train(
    sim: Simulation,
    policy: QNetwork,
    target: QNetwork,
    hp: Hyperparams,
    rng: np.random.Generator,
    keep_outcomes: bool = False,
) -> TrainResult:
    """Drive the simulator for hp.max_cycles cycles, learning online.

    Per cycle: every vacant driver picks an annealed action, the world steps,
    each resulting transition is stored and contributes one sampled minibatch,
    and a single SGD update is applied to the accumulated batch. Updates wait
    until the buffer holds at least one full minibatch. Decisions made on the
    final cycle are not stored (nothing to bootstrap from beyond the horizon).
    Deterministic given the generator state.
    """
    hp.validate()
    net = sim.net
    masks = build_all_masks(net)
    pass_rows = np.stack([m.passable for m in masks])
    if policy.head_width != pass_rows.shape[1]:
        raise AgentError(
            f"network head width {policy.head_width} does not match the "
            f"zone graph's action head {pass_rows.shape[1]}"
        )

    buffer = ReplayBuffer(hp.replay_capacity)
    result = TrainResult(policy=policy, target=target)
    cumulative_reward = 0.0

    for t in range(hp.max_cycles):
        threshold = anneal_threshold(t, hp.epsilon, hp.anneal_tau)
        actions = {}
        for did in sim.vacant_driver_ids():
            s = sim.observe_state(did)
            actions[did] = _select(s, policy, masks[s.zone], threshold, rng)
        outcome = sim.step(actions)
        if keep_outcomes:
            result.outcomes.append(outcome)

        sampled: list[Transition] = []
        final_cycle = t == hp.max_cycles - 1
        for rec in outcome.records:
            cumulative_reward += rec.reward
            if final_cycle:
                continue
            buffer.push(
                Transition(rec.state, rec.action, rec.reward, rec.next_state, rec.dt)
            )
            if len(buffer) >= hp.minibatch:
                sampled.extend(buffer.sample(hp.minibatch, rng))

        loss: float | None = None
        if sampled:
            loss = _update(policy, target, sampled, hp, pass_rows)
        result.curves.append(CycleTrace(t, loss, cumulative_reward, len(buffer)))

        if t % hp.sync_period == 0:
            sync_target(policy, target)

    return result


def _update(
    policy: QNetwork,
    target: QNetwork,
    batch: list[Transition],
    hp: Hyperparams,
    pass_rows: np.ndarray,
) -> float:
    """One SGD application on the accumulated per-cycle batch."""
    n = len(batch)
    idx = np.empty((n, 3), dtype=np.int64)
    idx_next = np.empty((n, 3), dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    next_zones = np.empty(n, dtype=np.int64)
    dts = np.empty(n)
    for i, tr in enumerate(batch):
        idx[i] = encode_indices(tr.state, policy.dims)
        idx_next[i] = encode_indices(tr.next_state, policy.dims)
        actions[i] = tr.action
        rewards[i] = tr.reward
        next_zones[i] = tr.next_state.zone
        dts[i] = tr.dt

    q_next = target.forward_onehot(idx_next)
    next_value = masked_max_rows(q_next, pass_rows[next_zones])
    discount = hp.gamma ** dts if hp.discount_by_trip_duration else hp.gamma
    targets = rewards + discount * next_value
    return sgd_step_onehot(policy, idx, actions, targets, hp.alpha)


def evaluate(
    sim: Simulation,
    policy: QNetwork,
    cycles: int,
    rng: np.random.Generator,
    epsilon: float = 0.1,
    keep_outcomes: bool = False,
) -> list[StepOutcome]:
    """Frozen-exploration pass: no learning, threshold pinned at epsilon."""
    masks = build_all_masks(sim.net)
    outcomes: list[StepOutcome] = []
    for _ in range(cycles):
        actions = {}
        for did in sim.vacant_driver_ids():
            s = sim.observe_state(did)
            actions[did] = _select(s, policy, masks[s.zone], epsilon, rng)
        outcome = sim.step(actions)
        if keep_outcomes:
            outcomes.append(outcome)
    return outcomes
