"""Coupled fine/coarse evaluation of the SPDE -> Darcy -> transport chain."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import SolverError
from ..grid import Field, GridLevel, l2_norm, prolong_values, restrict_noise
from ..rng import SeedKey, as_seed_key
from .darcy import darcy_solve
from .spde import MaternParams, cell_average, draw_cell_noise, grf_from_cell_noise
from .transport import TimeConfig, transport_solve


@dataclass
class SampleResult:
    """One coupled sample on ``level``.

    ``u_fine``/``u_coarse``/``v`` hold one row per snapshot time; the last
    row is the final time, on which the QoI is evaluated.
    """

    level: int
    grid: GridLevel
    u_fine: np.ndarray
    v: np.ndarray
    qoi_fine: float
    qoi_coarse: float | None = None
    u_coarse: np.ndarray | None = None
    q_fine: Field | None = None
    timings: dict = field(default_factory=dict)

    @property
    def y(self) -> float:
        return self.qoi_fine - (self.qoi_coarse or 0.0)

    @property
    def nbytes(self) -> int:
        n = self.u_fine.nbytes + self.v.nbytes
        if self.u_coarse is not None:
            n += self.u_coarse.nbytes
        return n


def qoi(u) -> float:
    """L2 norm of a cell field (final-time row if several are given)."""
    if isinstance(u, Field):
        values = np.atleast_2d(u.values)[-1]
        return l2_norm(values, u.grid)
    raise TypeError("qoi expects a cell Field")


def _solve_chain(grid: GridLevel, cell_noise: np.ndarray, params: MaternParams, time_cfg: TimeConfig, timings: dict, tag: str):
    stage = "spde"
    try:
        t0 = time.perf_counter()
        y = grf_from_cell_noise(grid, cell_noise, params)
        t1 = time.perf_counter()
        stage = "darcy"
        a = Field(grid, "cell", np.exp(-cell_average(y).values))
        q, _ = darcy_solve(a)
        t2 = time.perf_counter()
        stage = "transport"
        snaps = transport_solve(q, time_cfg)
        t3 = time.perf_counter()
    except SolverError as exc:
        exc.stage = exc.stage or stage
        exc.level = grid.level
        raise
    timings[f"spde_{tag}"] = t1 - t0
    timings[f"darcy_{tag}"] = t2 - t1
    timings[f"transport_{tag}"] = t3 - t2
    return np.stack([s.values for s in snaps]), q


def coupled_sample(
    level: int,
    seed,
    params: MaternParams,
    time_cfg: TimeConfig = TimeConfig(),
    *,
    base_cells_per_axis: int = 2,
    noise_level: int | None = None,
) -> SampleResult:
    """Run the chain on ``level`` and, for ``level > 0``, on ``level - 1`` with restricted noise.

    With ``noise_level`` set the white noise is drawn once on that (finer or
    equal) level and restricted down, so a given seed yields the same
    realization on every level of the hierarchy.
    """
    key = as_seed_key(seed)
    fine = GridLevel(level, params.dim, base_cells_per_axis)
    if noise_level is None:
        noise = draw_cell_noise(fine, SeedKey(key.run_seed, key.round, level, key.sample_index, 0))
    else:
        if noise_level < level:
            raise ValueError("noise_level must not be coarser than the sample level")
        top = GridLevel(noise_level, params.dim, base_cells_per_axis)
        noise = draw_cell_noise(top, SeedKey(key.run_seed, key.round, noise_level, key.sample_index, 0))
        for _ in range(noise_level - level):
            noise = restrict_noise(noise, top).values
            top = top.coarser()
    timings: dict = {}
    try:
        u_fine, q = _solve_chain(fine, noise, params, time_cfg, timings, "fine")
        if level == 0:
            q_f = l2_norm(u_fine[-1], fine)
            return SampleResult(level, fine, u_fine, u_fine, q_f, None, None, q, timings)
        coarse = fine.coarser()
        coarse_noise = restrict_noise(noise, fine).values
        u_coarse, _ = _solve_chain(coarse, coarse_noise, params, time_cfg, timings, "coarse")
    except SolverError as exc:
        exc.sample = key.sample_index
        raise
    v = u_fine - prolong_values(u_coarse, coarse)
    return SampleResult(
        level,
        fine,
        u_fine,
        v,
        l2_norm(u_fine[-1], fine),
        l2_norm(u_coarse[-1], coarse),
        u_coarse,
        q,
        timings,
    )


@dataclass(frozen=True)
class PDESampler:
    """Callable ``(level, key) -> SampleResult`` for the runtime."""

    params: MaternParams
    time_cfg: TimeConfig = TimeConfig()
    base_cells_per_axis: int = 2
    noise_level: int | None = None

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def snapshot_times(self) -> tuple[float, ...]:
        return self.time_cfg.snapshot_times

    def __call__(self, level: int, key: SeedKey) -> SampleResult:
        return coupled_sample(
            level,
            key,
            self.params,
            self.time_cfg,
            base_cells_per_axis=self.base_cells_per_axis,
            noise_level=self.noise_level,
        )
