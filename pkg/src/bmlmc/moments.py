"""Single-pass, mergeable first and second order statistics.

All updates use the difference-of-means form

    mean  <- mean + (dM / M) * delta
    S2    <- S2 + S2_batch + (M_old * dM / M) * delta**2
    z2    <- z2 + z2_batch + (M_old * dM / M) * ||delta||_V**2

with ``delta = mean_batch - mean``, so no sum of squares is ever formed.
The field norm ``||.||_V`` is the cell-volume weighted discrete L2 norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSamplesError, StructuralError
from .grid import GridLevel


@dataclass(frozen=True)
class ScalarAccumulator:
    count: int = 0
    mean: float = 0.0
    second_order_sum: float = 0.0

    @classmethod
    def of(cls, x: float) -> "ScalarAccumulator":
        return cls(1, float(x), 0.0)

    @classmethod
    def from_values(cls, xs) -> "ScalarAccumulator":
        xs = np.asarray(xs, dtype=float)
        if xs.size == 0:
            return cls()
        m = float(xs.mean())
        return cls(int(xs.size), m, float(np.sum((xs - m) ** 2)))

    def merge(self, other: "ScalarAccumulator") -> "ScalarAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        total = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + (other.count / total) * delta
        s2 = self.second_order_sum + other.second_order_sum + (self.count * other.count / total) * delta * delta
        return ScalarAccumulator(total, mean, max(s2, 0.0))

    def accumulate(self, x: float) -> "ScalarAccumulator":
        return self.merge(ScalarAccumulator.of(x))

    @property
    def variance(self) -> float:
        """Bessel-corrected sample variance."""
        if self.count < 2:
            raise InsufficientSamplesError(f"variance needs >= 2 samples, have {self.count}")
        return self.second_order_sum / (self.count - 1)

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "second_order_sum": self.second_order_sum}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarAccumulator":
        return cls(int(d["count"]), float(d["mean"]), float(d["second_order_sum"]))


@dataclass(frozen=True, eq=False)
class FieldAccumulator:
    """Streaming mean/S2 of a cell field on one grid level plus the norm-based sum z2.

    ``mean_field`` and ``s2_field`` may carry leading axes (e.g. one row per
    output time); the norm used for ``z2`` then sums over all rows.
    """

    grid: GridLevel
    count: int = 0
    mean_field: np.ndarray = field(default=None, repr=False)
    s2_field: np.ndarray = field(default=None, repr=False)
    z2: float = 0.0

    def __post_init__(self):
        if self.mean_field is None:
            object.__setattr__(self, "mean_field", np.zeros(self.grid.n_cells))
        if self.s2_field is None:
            object.__setattr__(self, "s2_field", np.zeros_like(self.mean_field))
        if self.mean_field.shape[-1] != self.grid.n_cells or self.s2_field.shape != self.mean_field.shape:
            raise StructuralError("accumulator arrays do not match the grid")

    @property
    def level(self) -> int:
        return self.grid.level

    @classmethod
    def empty(cls, grid: GridLevel, lead_shape: tuple[int, ...] = ()) -> "FieldAccumulator":
        z = np.zeros(lead_shape + (grid.n_cells,))
        return cls(grid, 0, z, z.copy(), 0.0)

    @classmethod
    def singleton(cls, grid: GridLevel, sample) -> "FieldAccumulator":
        x = np.array(sample, dtype=float)
        if x.shape[-1] != grid.n_cells:
            raise StructuralError(
                f"sample with {x.shape[-1]} cells does not live on level {grid.level} ({grid.n_cells} cells)"
            )
        return cls(grid, 1, x, np.zeros_like(x), 0.0)

    @classmethod
    def from_samples(cls, grid: GridLevel, samples) -> "FieldAccumulator":
        """Two-pass construction from a stacked array of samples (axis 0)."""
        xs = np.asarray(samples, dtype=float)
        if xs.shape[0] == 0:
            return cls.empty(grid, xs.shape[1:-1])
        mean = xs.mean(axis=0)
        dev = xs - mean
        z2 = float(np.sum(dev * dev) * grid.cell_volume)
        return cls(grid, xs.shape[0], mean, np.sum(dev * dev, axis=0), z2)

    def sq_norm(self, values: np.ndarray) -> float:
        return float(np.sum(values * values) * self.grid.cell_volume)

    def _check(self, other: "FieldAccumulator") -> None:
        if other.grid != self.grid:
            raise StructuralError(f"cannot combine level {other.grid} statistics into level {self.grid}")
        if other.mean_field.shape != self.mean_field.shape:
            raise StructuralError(
                f"field shape {other.mean_field.shape} does not match {self.mean_field.shape}"
            )

    def merge(self, batch: "FieldAccumulator") -> "FieldAccumulator":
        self._check(batch)
        if batch.count == 0:
            return self
        if self.count == 0:
            return batch
        total = self.count + batch.count
        delta = batch.mean_field - self.mean_field
        weight = self.count * batch.count / total
        mean = self.mean_field + (batch.count / total) * delta
        s2 = self.s2_field + batch.s2_field + weight * delta * delta
        z2 = self.z2 + batch.z2 + weight * self.sq_norm(delta)
        return FieldAccumulator(self.grid, total, mean, s2, z2)

    def accumulate(self, sample) -> "FieldAccumulator":
        return self.merge(FieldAccumulator.singleton(self.grid, sample))

    def variance_field(self) -> np.ndarray:
        if self.count < 2:
            raise InsufficientSamplesError(f"variance field needs >= 2 samples, have {self.count}")
        return self.s2_field / (self.count - 1)

    def sampling_error_term(self) -> float:
        """``z2 / (M^2 - M)``: this level's contribution to the sampling error."""
        if self.count < 2:
            raise InsufficientSamplesError(f"sampling error needs >= 2 samples, have {self.count}")
        return self.z2 / (self.count * self.count - self.count)

    @property
    def bochner_variance(self) -> float:
        """``z2 / (M - 1)``, the estimate of ``||v - E v||^2`` in L2(Omega, V)."""
        if self.count < 2:
            raise InsufficientSamplesError(f"needs >= 2 samples, have {self.count}")
        return self.z2 / (self.count - 1)

    def mean_norm(self) -> float:
        return float(np.sqrt(self.sq_norm(self.mean_field)))

    def to_dict(self, include_fields: bool = False) -> dict:
        d = {"level": self.level, "count": self.count, "z2": self.z2}
        if include_fields:
            d["mean_field"] = self.mean_field.tolist()
            d["s2_field"] = self.s2_field.tolist()
        return d


def accumulate(acc: FieldAccumulator, sample) -> FieldAccumulator:
    return acc.accumulate(sample)


def merge(acc: FieldAccumulator, batch: FieldAccumulator) -> FieldAccumulator:
    return acc.merge(batch)


def variance_field(acc: FieldAccumulator) -> np.ndarray:
    return acc.variance_field()


def sampling_error_term(acc: FieldAccumulator) -> float:
    return acc.sampling_error_term()
