"""Cross-entropy method over a Gaussian action distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianSearchState:
    """Mean and scale of the sampling distribution.

    A scalar ``sigma`` is the root-mean-square *norm* of deviations from
    ``mu``, so each coordinate is drawn with standard deviation
    ``sigma / sqrt(d)``; this is the quantity the elite update measures. With
    the per-dimension variant ``sigma`` is an array of coordinate std devs.
    """

    mu: np.ndarray
    sigma: float | np.ndarray
    iteration: int = 0

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    def to_dict(self) -> dict:
        sigma = self.sigma.tolist() if isinstance(self.sigma, np.ndarray) else float(self.sigma)
        return {"mu": self.mu.tolist(), "sigma": sigma, "iteration": self.iteration}

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianSearchState":
        sigma = data["sigma"]
        sigma = np.asarray(sigma, dtype=np.float64) if isinstance(sigma, list) else float(sigma)
        return cls(np.asarray(data["mu"], dtype=np.float64), sigma, int(data["iteration"]))


@dataclass(frozen=True)
class ElitePool:
    indices: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def initial_state(dim: int, coord_std: float, per_dimension: bool = False) -> GaussianSearchState:
    """Zero-mean start whose coordinates each have std ``coord_std``."""
    if per_dimension:
        return GaussianSearchState(np.zeros(dim), np.full(dim, float(coord_std)), 0)
    return GaussianSearchState(np.zeros(dim), float(coord_std) * math.sqrt(dim), 0)


def coordinate_std(state: GaussianSearchState) -> float | np.ndarray:
    if isinstance(state.sigma, np.ndarray):
        return state.sigma
    return state.sigma / math.sqrt(state.dim)


def sample_population(state: GaussianSearchState, K: int, rng) -> np.ndarray:
    """Draw ``K`` i.i.d. actions around ``mu``.

    ``rng`` may be a seed or a :class:`numpy.random.Generator`.
    """
    if K < 1:
        raise ValueError("population size must be at least 1")
    rng = np.random.default_rng(rng)
    noise = rng.standard_normal((K, state.dim))
    return state.mu[None, :] + coordinate_std(state) * noise


def select_elites(actions, rewards, n_elite: int) -> ElitePool:
    """Top ``n_elite`` by reward; ties go to the lower population index."""
    actions = np.asarray(actions, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if len(actions) != len(rewards):
        raise ValueError("actions and rewards differ in length")
    if n_elite > len(rewards):
        raise ValueError(f"cannot select {n_elite} elites from {len(rewards)} samples")
    if n_elite < 1:
        raise ValueError("need at least one elite")
    keys = np.where(np.isnan(rewards), -np.inf, rewards)
    order = np.argsort(-keys, kind="stable")[:n_elite]
    return ElitePool(order, actions[order], rewards[order])


def update_distribution(
    state: GaussianSearchState, elites: ElitePool | np.ndarray, sigma_floor: float = SIGMA_FLOOR
) -> GaussianSearchState:
    """Refit mean and scale to the elite set.

    The isotropic scale is ``sqrt(mean ||x - mu||^2)`` over the elites,
    i.e. a single number for the whole vector, then floored.
    """
    x = elites.actions if isinstance(elites, ElitePool) else np.asarray(elites, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty elite set")
    mu = x.mean(axis=0)
    dev = x - mu
    if isinstance(state.sigma, np.ndarray):
        sigma = np.maximum(np.sqrt(np.mean(dev**2, axis=0)), sigma_floor)
    else:
        sigma = max(float(np.sqrt(np.mean(np.sum(dev**2, axis=1)))), sigma_floor)
    return GaussianSearchState(mu, sigma, state.iteration + 1)
