"""Cheap synthetic objectives over normalized actions in ``[-1, 1]^d``.

All objectives are maximized. Inputs outside the box are clipped first,
mirroring the clamp applied to real designs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_DIM = 36
# fraction of the box declared invalid by ``plateau-invalid``
INVALID_FRACTION = 0.2


def sphere_optimum(dim: int) -> np.ndarray:
    return 0.5 * np.sin(np.arange(1, dim + 1))


@dataclass(frozen=True)
class BenchmarkObjective:
    name: str
    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    optimum: np.ndarray
    optimum_value: float
    invalid: Callable[[np.ndarray], np.ndarray] | None = None
    description: str = ""

    def reward(self, a) -> float | np.ndarray:
        """Reward of one action ``(d,)`` or a batch ``(n, d)``."""
        a = np.asarray(a, dtype=np.float64)
        single = a.ndim == 1
        x = np.clip(np.atleast_2d(a), -1.0, 1.0)
        if x.shape[1] != self.dim:
            raise ValueError(f"{self.name}: expected dimension {self.dim}, got {x.shape[1]}")
        r = self.fn(x)
        if self.invalid is not None:
            r = np.where(self.invalid(x), 0.0, r)
        return float(r[0]) if single else r


def make_sphere(dim: int = DEFAULT_DIM) -> BenchmarkObjective:
    opt = sphere_optimum(dim)
    return BenchmarkObjective(
        "sphere", dim, lambda x: -np.sum((x - opt) ** 2, axis=1), opt, 0.0,
        description="negated squared distance to a fixed interior point",
    )


def make_rosenbrock(dim: int = DEFAULT_DIM) -> BenchmarkObjective:
    # x = 2a puts the classic optimum (all ones) at a = 0.5
    def fn(a):
        x = 2.0 * a
        return -np.sum(100.0 * (x[:, 1:] - x[:, :-1] ** 2) ** 2 + (1.0 - x[:, :-1]) ** 2, axis=1)

    return BenchmarkObjective(
        "rosenbrock", dim, fn, np.full(dim, 0.5), 0.0,
        description="negated Rosenbrock valley on x = 2a",
    )


def make_plateau_invalid(dim: int = DEFAULT_DIM) -> BenchmarkObjective:
    """Sphere shifted non-negative with a slab of the box scoring 0.

    The slab ``a[k] > 1 - 2 * INVALID_FRACTION`` covers 20% of the box
    volume, where ``k`` is the coordinate whose optimum lies closest to it,
    so the search has to approach the boundary of the invalid region.
    """
    opt = sphere_optimum(dim)
    k = int(np.argmax(opt))
    edge = 1.0 - 2.0 * INVALID_FRACTION
    # largest squared distance from opt to any box corner
    peak = float(np.sum((1.0 + np.abs(opt)) ** 2))
    return BenchmarkObjective(
        "plateau-invalid", dim, lambda x: peak - np.sum((x - opt) ** 2, axis=1), opt, peak,
        invalid=lambda x: x[:, k] > edge,
        description="shifted sphere; a 20%-volume slab is invalid and scores 0",
    )


REGISTRY: dict[str, Callable[[int], BenchmarkObjective]] = {
    "sphere": make_sphere,
    "rosenbrock": make_rosenbrock,
    "plateau-invalid": make_plateau_invalid,
}


def get_benchmark(name: str, dim: int = DEFAULT_DIM) -> BenchmarkObjective:
    try:
        return REGISTRY[name](dim)
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(REGISTRY)}") from None
