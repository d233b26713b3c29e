"""Batch execution on a pool of worker slots with per-sample seeding and cost capture."""
from __future__ import annotations

import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

from .errors import BMLMCError, SolverError, TaskError
from .moments import FieldAccumulator, ScalarAccumulator
from .rng import SeedKey
from .scheduler import MemoryLedger, MultiIndexLayout
from .state import LevelState

__all__ = [
    "BatchResult",
    "CostRecord",
    "SeedKey",
    "VirtualCost",
    "execute_batch",
    "update_cost_estimate",
]


@dataclass(frozen=True)
class CostRecord:
    level: int
    sample: int
    seconds: float
    peak_cells: int

    def __post_init__(self):
        if not self.seconds > 0:
            raise ValueError("cost records must be positive")


@dataclass(frozen=True)
class VirtualCost:
    """Deterministic cost model ``c * 2^(l (d + 1))`` per sample."""

    constant: float
    dim: int

    def __call__(self, level: int) -> float:
        return self.constant * 2.0 ** (level * (self.dim + 1))


@dataclass
class BatchResult:
    layout: MultiIndexLayout
    first_index: int
    executed: int
    u: FieldAccumulator | None
    v: FieldAccumulator | None
    u_snap: FieldAccumulator | None
    v_snap: FieldAccumulator | None
    q: ScalarAccumulator
    y: ScalarAccumulator
    records: list = field(default_factory=list)
    consumed: float = 0.0
    peak_cells: int = 0


def _run_task(work, level: int, key: SeedKey):
    t0 = time.thread_time()
    result = work(level, key)
    return result, time.thread_time() - t0


def _merge_field(acc, grid, sample):
    single = FieldAccumulator.singleton(grid, sample)
    return single if acc is None else acc.merge(single)


def execute_batch(
    layout: MultiIndexLayout,
    work: Callable,
    *,
    key: SeedKey,
    first_index: int = 0,
    ledger: MemoryLedger | None = None,
    pool: Executor | None = None,
    cost_model: Callable[[int], float] | None = None,
    keep_fields: bool = True,
) -> BatchResult:
    """Run ``layout.sequential_batches`` waves of ``layout.parallel_samples`` tasks.

    ``work(level, key)`` returns a sample result (see ``pde.chain.SampleResult``).
    Sample ``m`` gets ``SeedKey(key.run_seed, key.round, level, first_index + m)``.
    Per-sample statistics are merged in sample-index order, so the outcome does
    not depend on which worker finished first.  With ``cost_model`` set the
    charged cost per sample is ``cost_model(level)`` instead of thread CPU time.
    """
    level = layout.level
    own_pool = pool is None
    if own_pool:
        pool = ThreadPoolExecutor(max_workers=layout.parallel_samples)
    u = v = u_snap = v_snap = None
    q, y = ScalarAccumulator(), ScalarAccumulator()
    records: list[CostRecord] = []
    started = time.perf_counter()
    index = first_index
    try:
        for _ in range(layout.sequential_batches):
            if ledger is not None:
                ledger.record(layout.cells_total)
            keys = [
                SeedKey(key.run_seed, key.round, level, index + m, 0) for m in range(layout.parallel_samples)
            ]
            futures = [pool.submit(_run_task, work, level, k) for k in keys]
            outcomes = []
            failure = None
            for k, fut in zip(keys, futures):
                try:
                    outcomes.append(fut.result())
                except SolverError as exc:
                    exc.level = level if exc.level is None else exc.level
                    exc.sample = k.sample_index if exc.sample is None else exc.sample
                    failure = failure or exc
                except BMLMCError as exc:
                    failure = failure or exc
                except Exception as exc:  # noqa: BLE001 - surfaced with context below
                    failure = failure or TaskError(level, k.sample_index, exc)
            if failure is not None:
                if ledger is not None:
                    ledger.release(layout.cells_total)
                raise failure
            if ledger is not None:
                ledger.calibrate(layout.cells_total, sum(r.nbytes for r, _ in outcomes))
            for k, (res, seconds) in zip(keys, outcomes):
                charged = cost_model(level) if cost_model is not None else max(seconds, 1e-9)
                peak = ledger.peak_cells if ledger is not None else 0
                records.append(CostRecord(level, k.sample_index, charged, peak))
                if keep_fields:
                    u = _merge_field(u, res.grid, res.u_fine[-1])
                    v = _merge_field(v, res.grid, res.v[-1])
                    u_snap = _merge_field(u_snap, res.grid, res.u_fine)
                    v_snap = _merge_field(v_snap, res.grid, res.v)
                q = q.accumulate(res.qoi_fine)
                y = y.accumulate(res.y)
            if ledger is not None:
                ledger.release(layout.cells_total)
            index += layout.parallel_samples
    finally:
        if own_pool:
            pool.shutdown(wait=True)
    if cost_model is None:
        consumed = time.perf_counter() - started
    else:
        consumed = (index - first_index) * cost_model(level)
    return BatchResult(
        layout=layout,
        first_index=first_index,
        executed=index - first_index,
        u=u,
        v=v,
        u_snap=u_snap,
        v_snap=v_snap,
        q=q,
        y=y,
        records=records,
        consumed=consumed,
        peak_cells=ledger.peak_cells if ledger is not None else 0,
    )


def update_cost_estimate(records, level_state: LevelState) -> LevelState:
    """Fold ``records`` of this level into the running mean ``cost_ct``."""
    own = [r.seconds for r in records if r.level == level_state.level]
    if not own:
        raise ValueError(f"no cost records for level {level_state.level}")
    n_old = level_state.cost_records
    total = level_state.cost_ct * n_old + sum(own)
    n_new = n_old + len(own)
    return replace(level_state, cost_ct=total / n_new, cost_records=n_new)
