"""Communication splits, batch plans and memory accounting for multi-sample layouts."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

from .errors import AccountingError, MemoryExhaustedError
from .grid import cell_count

BYTES_PER_MB = 1_000_000


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def comm_split(num_units: int, delta_m: int, mem_samples: int) -> int:
    """``s = ceil(log2(min(|P|, dM, M_mem)))``.

    Raises MemoryExhaustedError when not even one more sample fits.
    """
    if mem_samples <= 0:
        raise MemoryExhaustedError("no sample fits into the remaining memory budget")
    if not is_power_of_two(num_units):
        raise ValueError(f"number of processing units must be a power of two, got {num_units}")
    if delta_m < 1:
        raise ValueError("delta_m must be >= 1")
    m = min(num_units, delta_m, mem_samples)
    return (m - 1).bit_length()  # exact integer ceil(log2(m))


def batch_plan(delta_m: int, split: int) -> tuple[int, int]:
    """Parallel samples ``2^s`` and sequential batches ``ceil(dM / 2^s)``."""
    if delta_m < 1 or split < 0:
        raise ValueError("batch_plan needs delta_m >= 1 and split >= 0")
    parallel = 2**split
    return parallel, -(-delta_m // parallel)


def max_samples_in_memory(budget_mb: float, peak_estimate_mb: float, per_sample_mb: float) -> int:
    """``floor((Mem_B - C_max) / C_{0,l})`` clamped at zero."""
    if per_sample_mb <= 0:
        raise ValueError("per-sample memory must be positive")
    free = budget_mb - peak_estimate_mb
    if free <= 0:
        return 0
    # guard against 320/10 -> 31.999999 style rounding
    return max(int(math.floor(free / per_sample_mb * (1 + 1e-12))), 0)


@dataclass(frozen=True)
class MultiIndexLayout:
    level: int
    split: int
    parallel_samples: int
    sequential_batches: int
    cells_total: int
    group_size: int
    requested: int

    @property
    def scheduled(self) -> int:
        return self.parallel_samples * self.sequential_batches

    @classmethod
    def plan(
        cls,
        level: int,
        delta_m: int,
        *,
        num_units: int,
        mem_samples: int,
        base_cells: int,
        dim: int,
    ) -> "MultiIndexLayout":
        s = comm_split(num_units, delta_m, mem_samples)
        parallel, batches = batch_plan(delta_m, s)
        return cls(
            level=level,
            split=s,
            parallel_samples=parallel,
            sequential_batches=batches,
            cells_total=cell_count(base_cells, level, s, dim),
            group_size=num_units // parallel,
            requested=delta_m,
        )

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "s": self.split,
            "parallel": self.parallel_samples,
            "batches": self.sequential_batches,
            "cells": self.cells_total,
            "group_size": self.group_size,
            "requested": self.requested,
        }


@dataclass
class MemoryLedger:
    """Cell-unit tally of permanent and temporary allocations.

    ``bytes_per_cell`` is the running maximum of bytes/cells over every
    registration that reported a byte count.
    """

    budget_mb: float
    bytes_per_cell: float = 0.0
    permanent_cells: dict = field(default_factory=dict)
    dynamic_cells: int = 0
    peak_cells: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def permanent_total(self) -> int:
        return sum(self.permanent_cells.values())

    @property
    def current_cells(self) -> int:
        return self.permanent_total + self.dynamic_cells

    def _observe_bytes(self, cells: int, nbytes: int | None) -> None:
        if nbytes is not None and cells > 0:
            self.bytes_per_cell = max(self.bytes_per_cell, nbytes / cells)

    def calibrate(self, cells: int, nbytes: int) -> None:
        """Fold a measured byte count for ``cells`` cells into ``bytes_per_cell``."""
        with self._lock:
            self._observe_bytes(cells, nbytes)

    def add_permanent(self, level: int, cells: int, nbytes: int | None = None) -> None:
        with self._lock:
            self.permanent_cells[level] = self.permanent_cells.get(level, 0) + cells
            self._observe_bytes(cells, nbytes)
            self.peak_cells = max(self.peak_cells, self.current_cells)

    def record(self, cells: int, nbytes: int | None = None) -> "MemoryLedger":
        if cells < 0:
            raise AccountingError("cannot record a negative allocation")
        with self._lock:
            self.dynamic_cells += cells
            self._observe_bytes(cells, nbytes)
            self.peak_cells = max(self.peak_cells, self.current_cells)
        return self

    def release(self, cells: int) -> "MemoryLedger":
        with self._lock:
            if cells < 0 or cells > self.dynamic_cells:
                raise AccountingError(f"release of {cells} cells exceeds {self.dynamic_cells} recorded")
            self.dynamic_cells -= cells
        return self

    def cells_to_mb(self, cells: int) -> float:
        return cells * self.bytes_per_cell / BYTES_PER_MB

    @property
    def peak_mb(self) -> float:
        return self.cells_to_mb(self.peak_cells)

    def per_sample_mb(self, level: int, base_cells: int, dim: int) -> float:
        return self.cells_to_mb(cell_count(base_cells, level, 0, dim))

    def mem_samples(self, level: int, base_cells: int, dim: int) -> int:
        """``M^Mem`` for ``level`` from the measured peak footprint."""
        per_sample = self.per_sample_mb(level, base_cells, dim)
        if per_sample <= 0:
            return 2**62  # nothing measured yet: memory imposes no limit
        return max_samples_in_memory(self.budget_mb, self.peak_mb, per_sample)

    def to_dict(self) -> dict:
        return {
            "budget_mb": self.budget_mb,
            "bytes_per_cell": self.bytes_per_cell,
            "permanent_cells": {str(k): v for k, v in sorted(self.permanent_cells.items())},
            "dynamic_cells": self.dynamic_cells,
            "peak_cells": self.peak_cells,
        }


def ledger_record(ledger: MemoryLedger, cells: int, nbytes: int | None = None) -> MemoryLedger:
    return ledger.record(cells, nbytes)


def ledger_release(ledger: MemoryLedger, cells: int) -> MemoryLedger:
    return ledger.release(cells)


def memory_gate(ledger: MemoryLedger, max_level: int, base_cells: int, dim: int) -> bool:
    """True iff ``2 * bytes_per_cell * |K_{0,L}|`` fits into the budget."""
    if ledger.bytes_per_cell <= 0:
        return True
    need = 2 * ledger.bytes_per_cell * cell_count(base_cells, max_level, 0, dim)
    return need <= ledger.budget_mb * BYTES_PER_MB
