"""Cheap sampler with prescribed decay rates, used to exercise the driver.

Level ``l`` returns

    u_l(x) = f(x) + 2^{-a l} c + sum_{k<=l} 2^{-b k / 2} xi_k

with a smooth ``f``, a constant ``c`` and i.i.d. standard normal ``xi_k``
shared by all levels of one sample index.  Hence ``v_l`` has
``E ||v_l - E v_l||^2 = 2^{-b l}`` exactly and ``||E v_l|| ~ 2^{-l}``
(the cell-centre sampling of ``f`` is first order).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridLevel, l2_norm, prolong_values
from .pde.chain import SampleResult
from .rng import SeedKey, generator

_XI_STAGE = 0x5EED


@dataclass(frozen=True)
class SyntheticSampler:
    dim: int = 2
    base_cells_per_axis: int = 2
    bias_rate: float = 1.0
    variance_rate: float = 2.0
    offset: float = 0.5

    @property
    def snapshot_times(self) -> tuple[float, ...]:
        return (1.0,)

    def _field(self, grid: GridLevel, xi: np.ndarray) -> np.ndarray:
        smooth = np.ones(grid.shape)
        for x in grid.cell_centers():
            smooth = smooth * np.sin(np.pi * x)
        level = grid.level
        noise = sum(2.0 ** (-self.variance_rate * k / 2) * xi[k] for k in range(level + 1))
        out = smooth + 2.0 ** (-self.bias_rate * level) * self.offset + noise
        return out.reshape(1, -1)

    def __call__(self, level: int, key: SeedKey) -> SampleResult:
        xi = np.array(
            [
                generator(SeedKey(key.run_seed, key.round, k, key.sample_index, _XI_STAGE)).standard_normal()
                for k in range(level + 1)
            ]
        )
        fine = GridLevel(level, self.dim, self.base_cells_per_axis)
        u = self._field(fine, xi)
        if level == 0:
            return SampleResult(level, fine, u, u, l2_norm(u[-1], fine))
        coarse = fine.coarser()
        uc = self._field(coarse, xi)
        v = u - prolong_values(uc, coarse)
        return SampleResult(level, fine, u, v, l2_norm(u[-1], fine), l2_norm(uc[-1], coarse), uc)
