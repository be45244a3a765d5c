"""Replay buffer and a small numpy MLP critic trained by mean-squared error."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu")


class ModelDivergedError(FloatingPointError):
    """A loss, gradient or parameter became non-finite."""


# --------------------------------------------------------------------------
# replay buffer


class ReplayBuffer:
    """FIFO store of ground-truth ``(action, reward)`` pairs.

    Only the orchestrator's ground-truth branch appends here; ``n_added``
    counts every append (including evicted ones) so callers can audit that.
    Each entry carries a ``feasible`` flag; infeasible designs score 0 by
    rule, so training can optionally skip them.
    """

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._actions: deque[np.ndarray] = deque(maxlen=capacity)
        self._rewards: deque[float] = deque(maxlen=capacity)
        self._feasible: deque[bool] = deque(maxlen=capacity)
        self.n_added = 0

    def __len__(self) -> int:
        return len(self._rewards)

    @property
    def n_feasible(self) -> int:
        return sum(self._feasible)

    def add(self, action, reward: float, feasible: bool = True) -> None:
        reward = float(reward)
        if not math.isfinite(reward):
            raise ValueError(f"refusing non-finite reward {reward!r}")
        self._actions.append(np.array(action, dtype=np.float64))
        self._rewards.append(reward)
        self._feasible.append(bool(feasible))
        self.n_added += 1

    def arrays(self, feasible_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
        keep = [i for i, f in enumerate(self._feasible) if f or not feasible_only]
        if not keep:
            return np.empty((0, 0)), np.empty(0)
        return np.stack([self._actions[i] for i in keep]), np.asarray([self._rewards[i] for i in keep])

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "n_added": self.n_added,
            "actions": [a.tolist() for a in self._actions],
            "rewards": list(self._rewards),
            "feasible": list(self._feasible),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReplayBuffer":
        buf = cls(int(data["capacity"]))
        feasible = data.get("feasible", [True] * len(data["rewards"]))
        for a, r, f in zip(data["actions"], data["rewards"], feasible):
            buf._actions.append(np.asarray(a, dtype=np.float64))
            buf._rewards.append(float(r))
            buf._feasible.append(bool(f))
        buf.n_added = int(data["n_added"])
        return buf


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng, feasible_only: bool = False):
    """Uniform batch without replacement, or ``None`` while the buffer is too small.

    Training starts only once the buffer holds strictly more than
    ``batch_size`` eligible entries.
    """
    actions, rewards = buffer.arrays(feasible_only)
    if len(rewards) <= batch_size:
        return None
    rng = np.random.default_rng(rng)
    idx = rng.choice(len(rewards), size=batch_size, replace=False)
    return actions[idx], rewards[idx]


# --------------------------------------------------------------------------
# network


@dataclass
class MLP:
    """Fully connected network ``d -> hidden... -> 1``.

    ``weights[i]`` has shape ``(fan_out, fan_in)``. With no hidden layers the
    network is affine.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLP":
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)

    def to_dict(self) -> dict:
        return {
            "activation": self.activation,
            "layers": [
                {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MLP":
        weights, biases = [], []
        for layer in data["layers"]:
            weights.append(np.asarray(layer["weight"], dtype=np.float64).reshape(layer["shape"]))
            biases.append(np.asarray(layer["bias"], dtype=np.float64))
        return cls(weights, biases, data["activation"])


def init_mlp(dim: int, hidden: Sequence[int] = (64, 64), activation: str = "tanh", rng=None) -> MLP:
    """Uniform ``+-1/sqrt(fan_in)`` initialisation."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(rng)
    sizes = [dim, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MLP(weights, biases, activation)


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _dact(z, a, kind):
    return 1.0 - a * a if kind == "tanh" else (z > 0.0).astype(np.float64)


def _check_input(net: MLP, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"expected input dimension {net.input_dim}, got {x.shape[-1]}")
    return x


def forward(net: MLP, x) -> np.ndarray:
    """Batched forward pass; returns shape ``(n,)`` for input ``(n, d)``."""
    x = _check_input(net, x)
    single = x.ndim == 1
    h = x[None, :] if single else x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W.T + b
        if i < last:
            h = _act(h, net.activation)
    out = h[:, 0]
    return out[0] if single else out


def predict(net: MLP, x) -> float | np.ndarray:
    return forward(net, x)


def loss_and_grad(net: MLP, x, y) -> tuple[float, list[np.ndarray]]:
    """Mean squared error and its gradient, ordered as :meth:`MLP.params`."""
    x = _check_input(net, x)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n == 0:
        raise ValueError("empty batch")
    zs, acts = [], [x]
    h = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        zs.append(z)
        h = _act(z, net.activation) if i < last else z
        acts.append(h)
    resid = acts[-1][:, 0] - y
    loss = float(np.mean(resid**2))

    delta = (2.0 / n) * resid[:, None]
    grads: list[np.ndarray] = []
    for i in range(last, -1, -1):
        gW = delta.T @ acts[i]
        gb = delta.sum(axis=0)
        grads = [gW, gb] + grads
        if i > 0:
            delta = (delta @ net.weights[i]) * _dact(zs[i - 1], acts[i], net.activation)
    return loss, grads


def _require_finite(what: str, arrays) -> None:
    for k, arr in enumerate(arrays):
        if not np.all(np.isfinite(arr)):
            raise ModelDivergedError(f"non-finite {what} in tensor {k} (shape {np.shape(arr)})")


def train_step(net: MLP, x, y, lr: float) -> tuple[MLP, float]:
    """One plain gradient-descent step; the loss is taken before the update."""
    loss, grads = loss_and_grad(net, x, y)
    if not math.isfinite(loss):
        raise ModelDivergedError(f"non-finite loss {loss!r}")
    _require_finite("gradient", grads)
    new = net.copy()
    for p, g in zip(new.params(), grads):
        p -= lr * g
    _require_finite("parameter", new.params())
    return new, loss


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, net: MLP, grads: list[np.ndarray]) -> MLP:
        if not self.m:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.t += 1
        new = net.copy()
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(new.params(), grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return new

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
            "m": [a.ravel().tolist() for a in self.m],
            "v": [a.ravel().tolist() for a in self.v],
        }

    def load_state(self, data: dict, like: list[np.ndarray]) -> None:
        self.t = int(data["t"])
        self.m = [np.asarray(a, dtype=np.float64).reshape(p.shape) for a, p in zip(data["m"], like)]
        self.v = [np.asarray(a, dtype=np.float64).reshape(p.shape) for a, p in zip(data["v"], like)]


# --------------------------------------------------------------------------
# critic used by the optimizer


@dataclass
class RewardModelConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    learning_rate: float = 1e-3
    batch_size: int = 64
    optimizer: str = "sgd"
    train_steps: int = 1
    capacity: int = 100_000
    standardize_targets: bool = True
    # "quadratic" appends squared inputs, giving the network a response-surface basis
    input_features: str = "raw"


class RewardModel:
    """Critic ``Q(a)`` over normalized actions.

    Targets are standardized with the buffer's mean and standard deviation
    at each training step; predictions are mapped back to reward units.
    """

    def __init__(self, dim: int, config: RewardModelConfig = RewardModelConfig(), rng=None):
        if config.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {config.optimizer!r}")
        if config.input_features not in ("raw", "quadratic"):
            raise ValueError(f"unknown input_features {config.input_features!r}")
        self.config = config
        self.dim = dim
        width = 2 * dim if config.input_features == "quadratic" else dim
        self.net = init_mlp(width, config.hidden, config.activation, rng)
        self.adam = Adam(lr=config.learning_rate) if config.optimizer == "adam" else None
        self.target_mean = 0.0
        self.target_std = 1.0
        self.steps = 0

    @property
    def trained(self) -> bool:
        return self.steps > 0

    def features(self, actions) -> np.ndarray:
        a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if a.shape[1] != self.dim:
            raise ValueError(f"expected action dimension {self.dim}, got {a.shape[1]}")
        if self.config.input_features == "quadratic":
            return np.hstack([a, a * a])
        return a

    def predict(self, actions) -> np.ndarray:
        out = np.atleast_1d(forward(self.net, self.features(actions)))
        return out * self.target_std + self.target_mean

    def fit_batch(self, actions, rewards) -> float:
        """One optimizer step on a batch; returns the pre-update loss in standardized units."""
        actions = self.features(actions)
        y = (np.asarray(rewards, dtype=np.float64) - self.target_mean) / self.target_std
        if self.adam is None:
            self.net, loss = train_step(self.net, actions, y, self.config.learning_rate)
        else:
            loss, grads = loss_and_grad(self.net, actions, y)
            if not math.isfinite(loss):
                raise ModelDivergedError(f"non-finite loss {loss!r}")
            _require_finite("gradient", grads)
            self.net = self.adam.step(self.net, grads)
            _require_finite("parameter", self.net.params())
        self.steps += 1
        return loss

    def update_stats(self, buffer: ReplayBuffer, feasible_only: bool = False) -> None:
        _, rewards = buffer.arrays(feasible_only)
        if not self.config.standardize_targets or len(rewards) == 0:
            return
        self.target_mean = float(rewards.mean())
        std = float(rewards.std())
        self.target_std = std if std > 1e-12 else 1.0

    def to_dict(self) -> dict:
        return {
            "net": self.net.to_dict(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "steps": self.steps,
            "adam": self.adam.to_dict() if self.adam is not None else None,
        }

    def load_state(self, data: dict) -> None:
        self.net = MLP.from_dict(data["net"])
        self.target_mean = float(data["target_mean"])
        self.target_std = float(data["target_std"])
        self.steps = int(data["steps"])
        if data.get("adam") is not None:
            if self.adam is None:
                raise ValueError("checkpoint carries Adam state but the model uses SGD")
            self.adam.load_state(data["adam"], self.net.params())
