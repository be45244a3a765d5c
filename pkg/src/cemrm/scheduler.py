"""Schedule for the fraction of each population scored by the reward model."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


def linear_rate(j: int, N: int, rho_min: float, rho_max: float) -> float:
    """Linear ramp from ``rho_min`` toward ``rho_max``, reaching it at ``j == N``."""
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    rate = rho_min + (rho_max - rho_min) * j / N
    return min(max(rate, rho_min), rho_max)


@dataclass(frozen=True)
class RateSchedule:
    rho_min: float = 0.1
    rho_max: float = 0.7
    N: int = 100
    eta: float = 0.9
    rho: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.rho_min <= self.rho_max <= 1.0:
            raise ValueError("need 0 <= rho_min <= rho_max <= 1")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    def advance(self, j: int) -> "RateSchedule":
        return advance(self, j)


def advance(schedule: RateSchedule, j: int) -> RateSchedule:
    """One step of the smoothed schedule; the first call adopts the linear rate."""
    target = linear_rate(j, schedule.N, schedule.rho_min, schedule.rho_max)
    if schedule.rho is None:
        return replace(schedule, rho=target)
    return replace(schedule, rho=schedule.eta * schedule.rho + (1.0 - schedule.eta) * target)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def model_count(rho: float, K: int) -> int:
    return min(max(round_half_up(rho * K), 0), K)


def split_population(rho: float, K: int, rng) -> np.ndarray:
    """Sorted indices (without replacement) to be scored by the reward model."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if K < 1:
        raise ValueError("K must be >= 1")
    n = model_count(rho, K)
    rng = np.random.default_rng(rng)
    return np.sort(rng.permutation(K)[:n])
