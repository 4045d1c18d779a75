"""Fully connected action-value network with exact gradients and plain SGD.

Architecture: one-hot state in, two ELU hidden layers of equal width, linear
action head whose width equals the network-wide action-head width. States are
one-hot triples (minute of day, day of week, zone), so besides the dense
forward/backward there is an index-based fast path that gathers and
scatter-adds the three active input rows instead of multiplying the full
input matrix. Both paths implement the same math.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import State, StateDims
from .zones import ActionMask

CHECKPOINT_VERSION = 1


class QNetError(ValueError):
    """Shape, range, or contract violation in network operations."""


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(z))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(z))


def encode_state(s: State, dims: StateDims) -> np.ndarray:
    """One-hot indicator vector with exactly one active entry per block."""
    x = np.zeros(dims.input_dim, dtype=np.float64)
    for pos in encode_indices(s, dims):
        x[pos] = 1.0
    return x


def encode_indices(s: State, dims: StateDims) -> tuple[int, int, int]:
    """Active positions of the one-hot encoding (minute, day, zone blocks)."""
    minute, day, zone = int(s[0]), int(s[1]), int(s[2])
    if not 0 <= minute < dims.minutes:
        raise QNetError(f"minute {minute} outside [0, {dims.minutes})")
    if not 0 <= day < dims.days:
        raise QNetError(f"day {day} outside [0, {dims.days})")
    if not 0 <= zone < dims.zones:
        raise QNetError(f"zone {zone} outside [0, {dims.zones})")
    return (minute, dims.minutes + day, dims.minutes + dims.days + zone)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class QNetwork:
    dims: StateDims
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def create(
        cls,
        dims: StateDims,
        head_width: int,
        hidden_units: int = 256,
        rng: np.random.Generator | None = None,
    ) -> "QNetwork":
        if head_width < 1 or hidden_units < 1:
            raise QNetError("head_width and hidden_units must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        d = dims.input_dim
        return cls(
            dims=dims,
            w1=_glorot(rng, d, hidden_units),
            b1=np.zeros(hidden_units),
            w2=_glorot(rng, hidden_units, hidden_units),
            b2=np.zeros(hidden_units),
            w3=_glorot(rng, hidden_units, head_width),
            b3=np.zeros(head_width),
        )

    @property
    def head_width(self) -> int:
        return self.b3.size

    @property
    def hidden_units(self) -> int:
        return self.b1.size

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("w1", self.w1),
            ("b1", self.b1),
            ("w2", self.w2),
            ("b2", self.b2),
            ("w3", self.w3),
            ("b3", self.b3),
        ]

    def copy(self) -> "QNetwork":
        return QNetwork(
            dims=self.dims,
            **{name: arr.copy() for name, arr in self.parameters()},
        )

    # -- forward -----------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Action values for a dense encoded state; accepts (d,) or (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.w1.shape[0]:
            raise QNetError(
                f"input width {X.shape[1]} does not match network input {self.w1.shape[0]}"
            )
        q = self._forward_cached(X)[-1]
        return q[0] if single else q

    def forward_onehot(self, idx: np.ndarray) -> np.ndarray:
        """Action values from active-index triples; accepts (3,) or (n, 3)."""
        idx = np.asarray(idx, dtype=np.int64)
        single = idx.ndim == 1
        I = idx[None, :] if single else idx
        q = self._forward_cached_onehot(I)[-1]
        return q[0] if single else q

    def _forward_cached(self, X: np.ndarray):
        z1 = X @ self.w1 + self.b1
        return self._tail(z1)

    def _forward_cached_onehot(self, idx: np.ndarray):
        z1 = self.w1[idx[:, 0]] + self.w1[idx[:, 1]] + self.w1[idx[:, 2]] + self.b1
        return self._tail(z1)

    def _tail(self, z1: np.ndarray):
        h1 = _elu(z1)
        z2 = h1 @ self.w2 + self.b2
        h2 = _elu(z2)
        q = h2 @ self.w3 + self.b3
        return z1, h1, z2, h2, q

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            version=np.int64(CHECKPOINT_VERSION),
            minutes=np.int64(self.dims.minutes),
            days=np.int64(self.dims.days),
            zones=np.int64(self.dims.zones),
            **dict(self.parameters()),
        )

    @classmethod
    def load(cls, path: str | Path) -> "QNetwork":
        with np.load(path) as data:
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise QNetError(f"unsupported checkpoint version {version}")
            dims = StateDims(
                zones=int(data["zones"]),
                minutes=int(data["minutes"]),
                days=int(data["days"]),
            )
            return cls(dims=dims, **{k: data[k] for k in ("w1", "b1", "w2", "b2", "w3", "b3")})


# -- masked evaluation -------------------------------------------------------


def masked_max(q: np.ndarray, mask: ActionMask) -> tuple[float, int]:
    """Max and argmax over pass entries only; ties resolve to the lowest index.

    Blocked entries are overwritten with -inf before the max, so they can
    never win regardless of sign or magnitude of their q-values.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size != len(mask):
        raise QNetError(f"q-vector of length {q.size} does not fit mask of length {len(mask)}")
    if mask.num_pass == 0:
        raise QNetError(f"mask for zone {mask.zone} blocks every action")
    filtered = np.where(mask.passable, q, -np.inf)
    idx = int(np.argmax(filtered))
    return float(filtered[idx]), idx


def masked_max_rows(Q: np.ndarray, passable: np.ndarray) -> np.ndarray:
    """Row-wise masked max for a batch; each row must pass at least one entry."""
    if Q.shape != passable.shape:
        raise QNetError(f"q batch {Q.shape} does not fit mask batch {passable.shape}")
    if not passable.any(axis=1).all():
        raise QNetError("a row blocks every action")
    return np.where(passable, Q, -np.inf).max(axis=1)


def td_target(
    reward: float,
    next_state: State,
    target_net: QNetwork,
    next_mask: ActionMask,
    gamma: float,
) -> float:
    """Bootstrap target: reward plus discounted masked max at the next state."""
    if next_mask.zone != next_state.zone:
        raise QNetError(
            f"mask was built for zone {next_mask.zone} but next state is in zone {next_state.zone}"
        )
    if len(next_mask) != target_net.head_width:
        raise QNetError(
            f"mask length {len(next_mask)} does not match head width {target_net.head_width}"
        )
    q = target_net.forward_onehot(np.array(encode_indices(next_state, target_net.dims)))
    value, _ = masked_max(q, next_mask)
    return float(reward) + float(gamma) * value


# -- training ----------------------------------------------------------------


def _loss_and_grads(net: QNetwork, cache, X_dense, idx, actions, targets):
    z1, h1, z2, h2, q = cache
    n = actions.size
    taken = q[np.arange(n), actions]
    diff = taken - targets
    loss = float(np.mean(diff**2))

    delta_q = np.zeros_like(q)
    delta_q[np.arange(n), actions] = 2.0 * diff / n
    grads = {
        "w3": h2.T @ delta_q,
        "b3": delta_q.sum(axis=0),
    }
    delta2 = (delta_q @ net.w3.T) * _elu_grad(z2)
    grads["w2"] = h1.T @ delta2
    grads["b2"] = delta2.sum(axis=0)
    delta1 = (delta2 @ net.w2.T) * _elu_grad(z1)
    if idx is not None:
        dw1 = np.zeros_like(net.w1)
        np.add.at(dw1, idx.ravel(), np.repeat(delta1, 3, axis=0))
        grads["w1"] = dw1
    else:
        grads["w1"] = X_dense.T @ delta1
    grads["b1"] = delta1.sum(axis=0)
    return loss, grads


def loss_gradients(net: QNetwork, X: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean-squared TD loss and its exact parameter gradients (dense inputs)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    if actions.size == 0:
        raise QNetError("empty batch")
    if not ((0 <= actions) & (actions < net.head_width)).all():
        raise QNetError("action index outside the network head")
    cache = net._forward_cached(X)
    return _loss_and_grads(net, cache, X, None, actions, targets)


def _apply(net: QNetwork, grads: dict, alpha: float) -> None:
    for name, arr in net.parameters():
        arr -= alpha * grads[name]


def sgd_step(net: QNetwork, batch, alpha: float) -> float:
    """One descent step on the mean-squared error of the taken actions.

    ``batch`` holds (encoded state, action index, target) triples. Gradients
    flow only through each taken action's output unit; the returned loss is
    the pre-update value.
    """
    if len(batch) == 0:
        raise QNetError("empty batch")
    X = np.stack([np.asarray(x, dtype=np.float64) for x, _, _ in batch])
    actions = np.array([a for _, a, _ in batch], dtype=np.int64)
    targets = np.array([y for _, _, y in batch], dtype=np.float64)
    loss, grads = loss_gradients(net, X, actions, targets)
    _apply(net, grads, alpha)
    return loss


def sgd_step_onehot(
    net: QNetwork,
    idx: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    alpha: float,
) -> float:
    """Index fast path of :func:`sgd_step` for one-hot encoded batches."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    if actions.size == 0:
        raise QNetError("empty batch")
    cache = net._forward_cached_onehot(idx)
    loss, grads = _loss_and_grads(net, cache, None, idx, actions, targets)
    _apply(net, grads, alpha)
    return loss


def grad_check(
    net: QNetwork,
    x: np.ndarray,
    action: int,
    target: float,
    epsilon: float = 1e-4,
) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    Entries where both gradients are below 1e-8 in magnitude count as exact
    zeros. Intended for small networks; cost is two forward passes per
    parameter.
    """
    x = np.asarray(x, dtype=np.float64)
    _, grads = loss_gradients(net, x, np.array([action]), np.array([target]))

    def loss_at() -> float:
        q = net.forward(x)
        return float((q[action] - target) ** 2)

    worst = 0.0
    for name, arr in net.parameters():
        analytic = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + epsilon
            lp = loss_at()
            arr[ix] = orig - epsilon
            lm = loss_at()
            arr[ix] = orig
            numeric = (lp - lm) / (2.0 * epsilon)
            a = float(analytic[ix])
            scale = max(abs(a), abs(numeric))
            if scale >= 1e-8:
                worst = max(worst, abs(a - numeric) / scale)
            it.iternext()
    return worst
