"""Nested uniform grids on the unit cube and level transfer of cell fields.

Cells are stored in C order over an array of shape ``(n,) * dim`` where
array axis ``k`` runs along coordinate ``x_{k+1}``; the last axis is the
"vertical" direction used by the flow problem.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import StructuralError, UnsupportedTransferError

INT64_MAX = 2**63 - 1
STORAGE_KINDS = ("cell", "face", "node")


def cell_count(base_cells: int, level: int, split: int, dim: int) -> int:
    """Number of cells of the multi-sample space on multi-index (split, level).

    ``base_cells`` is the total cell count of the level-0 mesh, not cells per axis.
    """
    if min(base_cells, level, split, dim) < 0:
        raise ValueError("cell_count arguments must be nonnegative")
    n = base_cells * 2 ** (level * dim + split)
    if n > INT64_MAX:
        raise OverflowError(f"cell count {n} exceeds 64-bit index range")
    return n


@dataclass(frozen=True)
class GridLevel:
    level: int
    dim: int = 2
    base_cells_per_axis: int = 2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"only dim 1 or 2 is supported, got {self.dim}")
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if self.base_cells_per_axis < 1:
            raise ValueError("base_cells_per_axis must be >= 1")

    @property
    def cells_per_axis(self) -> int:
        return self.base_cells_per_axis * 2**self.level

    @property
    def mesh_width(self) -> float:
        return 1.0 / self.cells_per_axis

    @property
    def cell_volume(self) -> float:
        return self.mesh_width**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.dim

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis + 1,) * self.dim

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.dim

    @property
    def n_nodes(self) -> int:
        return (self.cells_per_axis + 1) ** self.dim

    def face_shape(self, axis: int) -> tuple[int, ...]:
        """Shape of the array of faces normal to ``axis``."""
        shape = list(self.shape)
        shape[axis] += 1
        return tuple(shape)

    @property
    def n_faces(self) -> int:
        return sum(math.prod(self.face_shape(k)) for k in range(self.dim))

    def dof_count(self, kind: str) -> int:
        if kind == "cell":
            return self.n_cells
        if kind == "node":
            return self.n_nodes
        if kind == "face":
            return self.n_faces
        raise ValueError(f"unknown storage kind {kind!r}")

    def coarser(self) -> "GridLevel":
        if self.level == 0:
            raise StructuralError("level 0 has no coarser grid")
        return GridLevel(self.level - 1, self.dim, self.base_cells_per_axis)

    def finer(self) -> "GridLevel":
        return GridLevel(self.level + 1, self.dim, self.base_cells_per_axis)

    def cell_centers(self) -> list[np.ndarray]:
        """Coordinate arrays (one per axis, each of ``shape``) of cell midpoints."""
        x = (np.arange(self.cells_per_axis) + 0.5) * self.mesh_width
        return list(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def node_coords(self) -> list[np.ndarray]:
        x = np.linspace(0.0, 1.0, self.cells_per_axis + 1)
        return list(np.meshgrid(*([x] * self.dim), indexing="ij"))


@dataclass
class Field:
    grid: GridLevel
    kind: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in STORAGE_KINDS:
            raise ValueError(f"unknown storage kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.dof_count(self.kind)
        if self.values.shape[-1] != expected:
            raise StructuralError(
                f"{self.kind} field on level {self.grid.level} needs {expected} values,"
                f" got {self.values.shape[-1]}"
            )

    @classmethod
    def zeros(cls, grid: GridLevel, kind: str = "cell") -> "Field":
        return cls(grid, kind, np.zeros(grid.dof_count(kind)))

    @classmethod
    def constant(cls, grid: GridLevel, value: float, kind: str = "cell") -> "Field":
        return cls(grid, kind, np.full(grid.dof_count(kind), float(value)))

    def face_component(self, axis: int) -> np.ndarray:
        """Normal-velocity values on faces normal to ``axis`` as an array."""
        if self.kind != "face":
            raise UnsupportedTransferError("face_component needs a face field")
        offset = sum(math.prod(self.grid.face_shape(k)) for k in range(axis))
        shape = self.grid.face_shape(axis)
        return self.values[offset : offset + math.prod(shape)].reshape(shape)

    @cached_property
    def as_array(self) -> np.ndarray:
        if self.kind == "cell":
            return self.values.reshape(self.grid.shape)
        if self.kind == "node":
            return self.values.reshape(self.grid.node_shape)
        raise UnsupportedTransferError("face fields have no single array form")


def _cell_values(f, grid: GridLevel | None = None) -> tuple[np.ndarray, GridLevel]:
    if isinstance(f, Field):
        if f.kind != "cell":
            raise UnsupportedTransferError(f"no cell transfer for {f.kind} fields")
        return f.values, f.grid
    if grid is None:
        raise TypeError("raw arrays need an explicit grid")
    values = np.asarray(f, dtype=float)
    if values.shape[-1] != grid.n_cells:
        raise StructuralError(f"expected {grid.n_cells} cell values, got {values.shape[-1]}")
    return values, grid


def prolong_values(values: np.ndarray, coarse: GridLevel, levels: int = 1) -> np.ndarray:
    """Inject cell values ``levels`` times; leading axes (e.g. snapshots) are kept."""
    values = np.asarray(values, dtype=float)
    lead = values.shape[:-1]
    arr = values.reshape(lead + coarse.shape)
    factor = 2**levels
    for ax in range(coarse.dim):
        arr = np.repeat(arr, factor, axis=len(lead) + ax)
    return arr.reshape(lead + (-1,))


def prolong(coarse: Field, levels: int = 1) -> Field:
    """Piecewise-constant injection of a cell field onto the next finer level(s)."""
    values, grid = _cell_values(coarse)
    target = grid
    for _ in range(levels):
        target = target.finer()
    return Field(target, "cell", prolong_values(values, grid, levels))


def restrict_noise(fine_xi, fine_grid: GridLevel | None = None) -> Field:
    """Sum children of each coarse cell and rescale by ``2^{-d/2}``.

    I.i.d. standard normal input stays i.i.d. standard normal, and the
    coarse cell-average of the underlying white noise equals the average of
    the fine cell-averages, which is what couples the two levels.
    """
    values, grid = _cell_values(fine_xi, fine_grid)
    coarse = grid.coarser()
    d = grid.dim
    lead = values.shape[:-1]
    n = coarse.cells_per_axis
    split = []
    for _ in range(d):
        split += [n, 2]
    arr = values.reshape(lead + tuple(split))
    child_axes = tuple(len(lead) + 2 * k + 1 for k in range(d))
    summed = arr.sum(axis=child_axes)
    return Field(coarse, "cell", summed.reshape(lead + (-1,)) * 2.0 ** (-d / 2))


def l2_norm(f, grid: GridLevel | None = None) -> float:
    values, grid = _cell_values(f, grid)
    return float(np.sqrt(np.sum(values * values) * grid.cell_volume))


def write_field_csv(path_or_buf, f: Field, *, time: float | None = None) -> None:
    """Write a cell field: one ``#`` header line, then rows along the first axis."""
    values, grid = _cell_values(f)
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        shape = "x".join(str(s) for s in grid.shape)
        header = f"# level={grid.level} dim={grid.dim} base={grid.base_cells_per_axis} shape={shape}"
        if time is not None:
            header += f" time={time!r}"
        fh.write(header + "\n")
        writer = csv.writer(fh)
        arr = values.reshape(grid.shape)
        if grid.dim == 1:
            arr = arr[None, :]
        for row in arr:
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()


def read_field_csv(path_or_buf) -> tuple[Field, float | None]:
    if isinstance(path_or_buf, str) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, newline="") as fh:
            text = fh.read()
    else:
        text = path_or_buf.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("field CSV is missing its header line")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    grid = GridLevel(int(meta["level"]), int(meta["dim"]), int(meta["base"]))
    rows = [list(map(float, r)) for r in csv.reader(io.StringIO("\n".join(lines[1:]))) if r]
    values = np.asarray(rows, dtype=float).reshape(-1)
    time = float(meta["time"]) if "time" in meta else None
    return Field(grid, "cell", values), time
