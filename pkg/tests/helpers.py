"""Deterministic samplers shared by the driver and acceptance tests."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from bmlmc.grid import GridLevel, l2_norm, prolong_values
from bmlmc.pde.chain import SampleResult


@lru_cache(maxsize=None)
def _exact_sequence(n: int) -> tuple[float, ...]:
    # every prefix of length M >= 2 has Bessel-corrected sample variance exactly 1
    xs, mean = [0.0], 0.0
    for m in range(2, n + 1):
        x = mean + (-1) ** m * math.sqrt(m / (m - 1))
        mean += (x - mean) / m
        xs.append(x)
    return tuple(xs)


def exact_draw(index: int) -> float:
    size = 1024
    while size <= index:
        size *= 2
    return _exact_sequence(size)[index]


@dataclass(frozen=True)
class ExactDecayStub:
    """``v_l`` has sample variance exactly ``2^{-beta l}`` and mean norm ``2^{-alpha l}``."""

    dim: int = 2
    base_cells_per_axis: int = 2
    alpha: float = 1.0
    beta: float = 2.0

    @property
    def snapshot_times(self) -> tuple[float, ...]:
        return (1.0,)

    def _u(self, grid: GridLevel, m: int) -> np.ndarray:
        x = exact_draw(m)
        noise = sum(2.0 ** (-self.beta * k / 2) * x for k in range(1, grid.level + 1))
        value = 1.0 - 2.0 ** (-self.alpha * grid.level) + noise
        return np.full((1, grid.n_cells), value)

    def __call__(self, level, key):
        g = GridLevel(level, self.dim, self.base_cells_per_axis)
        u = self._u(g, key.sample_index)
        if level == 0:
            return SampleResult(0, g, u, u, l2_norm(u[-1], g))
        c = g.coarser()
        uc = self._u(c, key.sample_index)
        return SampleResult(level, g, u, u - prolong_values(uc, c), l2_norm(u[-1], g), l2_norm(uc[-1], c), uc)
