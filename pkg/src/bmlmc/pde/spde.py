"""Matern Gaussian random fields from the SPDE ``(kappa^2 - Laplace) y = W``.

Multilinear Lagrange elements on the uniform grid.  The white noise is
driven by one standard normal per cell, so a coarse-level realisation of
the same sample is obtained by restricting the fine draws.  Boundary
artefacts are reduced by averaging ``2^d`` solves with homogeneous
Dirichlet/Neumann conditions on the axis pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.special import gamma, kv

from ..errors import ConfigError
from ..grid import Field, GridLevel
from ..rng import SeedKey, as_seed_key, generator
from . import linalg

SPDE_RTOL = 1e-10


@dataclass(frozen=True)
class MaternParams:
    lam: float = 0.3
    nu: float = 1.0
    sigma: float = 1.0
    dim: int = 2

    def __post_init__(self):
        problems = []
        if not self.lam > 0:
            problems.append("correlation length lambda must be > 0")
        if not self.nu > 0:
            problems.append("smoothness nu must be > 0")
        if not self.sigma > 0:
            problems.append("scale sigma must be > 0")
        if self.dim not in (1, 2):
            problems.append(f"dimension must be 1 or 2, got {self.dim}")
        elif not math.isclose(self.zeta, 1.0, abs_tol=1e-12):
            problems.append(
                f"SPDE exponent zeta = (nu + d/2)/2 = {self.zeta:g} must equal 1"
                f" (use nu = {2 - self.dim / 2:g} for d = {self.dim})"
            )
        if problems:
            raise ConfigError(problems)

    @property
    def kappa(self) -> float:
        return math.sqrt(2 * self.nu) / self.lam

    @property
    def zeta(self) -> float:
        return (self.nu + self.dim / 2) / 2

    @property
    def spde_variance(self) -> float:
        """Marginal variance of the whole-space SPDE solution with unit white noise."""
        d, nu = self.dim, self.nu
        return gamma(nu) / (gamma(nu + d / 2) * (4 * math.pi) ** (d / 2) * self.kappa ** (2 * nu))

    def covariance(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        kr = self.kappa * r
        with np.errstate(invalid="ignore"):
            c = self.sigma**2 / (2 ** (self.nu - 1) * gamma(self.nu)) * kr**self.nu * kv(self.nu, kr)
        return np.where(r == 0, self.sigma**2, c)


# 1D building blocks -------------------------------------------------------

@lru_cache(maxsize=None)
def _p1_matrices(n: int):
    """Consistent mass, stiffness, lumped mass and cell->node incidence on n cells of (0,1)."""
    h = 1.0 / n
    main = np.full(n + 1, 4.0)
    main[[0, -1]] = 2.0
    off = np.ones(n)
    mass = sp.diags([off, main, off], [-1, 0, 1]) * (h / 6)
    main = np.full(n + 1, 2.0)
    main[[0, -1]] = 1.0
    stiff = sp.diags([-off, main, -off], [-1, 0, 1]) / h
    lumped = np.full(n + 1, h)
    lumped[[0, -1]] = h / 2
    rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    incidence = sp.csr_matrix((np.ones(2 * n), (rows, cols)), shape=(n + 1, n))
    return mass.tocsr(), stiff.tocsr(), lumped, incidence


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


def _outer_all(vecs):
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return np.asarray(out).reshape(-1)


def boundary_combo(b: int, dim: int) -> tuple[bool, ...]:
    """Per axis: True = homogeneous Dirichlet on both faces, False = Neumann."""
    return tuple(bool((b >> k) & 1) for k in range(dim))


@lru_cache(maxsize=64)
def lumped_mass(grid: GridLevel) -> np.ndarray:
    _, _, lumped, _ = _p1_matrices(grid.cells_per_axis)
    return _outer_all([lumped] * grid.dim)


@lru_cache(maxsize=64)
def _incidence(grid: GridLevel):
    _, _, _, inc = _p1_matrices(grid.cells_per_axis)
    C = _kron_all([inc] * grid.dim)
    counts = np.asarray(C.sum(axis=1)).ravel()
    return C, counts


@lru_cache(maxsize=64)
def node_to_cell(grid: GridLevel) -> sp.csr_matrix:
    _, _, _, inc = _p1_matrices(grid.cells_per_axis)
    return _kron_all([(inc.T * 0.5).tocsr()] * grid.dim)


@lru_cache(maxsize=256)
def _operator(grid: GridLevel, kappa: float, combo: tuple[bool, ...]):
    mass, stiff, _, _ = _p1_matrices(grid.cells_per_axis)
    ms, ks, keep = [], [], []
    for dirichlet in combo:
        idx = np.arange(1, grid.cells_per_axis) if dirichlet else np.arange(grid.cells_per_axis + 1)
        ms.append(mass[idx][:, idx])
        ks.append(stiff[idx][:, idx])
        keep.append(idx)
    A = kappa**2 * _kron_all(ms)
    for k in range(grid.dim):
        A = A + _kron_all([ks[j] if j == k else ms[j] for j in range(grid.dim)])
    A = sp.csr_matrix(A)
    free = np.ravel_multi_index(np.meshgrid(*keep, indexing="ij"), grid.node_shape).reshape(-1)
    return A, free


def nodal_standard_normals(grid: GridLevel, cell_xi: np.ndarray) -> np.ndarray:
    """Unit-variance nodal draws built from the incident cells' draws."""
    C, counts = _incidence(grid)
    return (C @ cell_xi) / np.sqrt(counts)


def white_noise_from_cells(grid: GridLevel, cell_xi: np.ndarray) -> np.ndarray:
    """``w = M_lumped^{-1/2} xi`` with the nodal ``xi`` from :func:`nodal_standard_normals`."""
    return nodal_standard_normals(grid, cell_xi) / np.sqrt(lumped_mass(grid))


def sample_white_noise(grid: GridLevel, seed, *, xi: np.ndarray | None = None) -> Field:
    """Nodal white-noise field for ``(grid, seed)``; ``xi`` overrides the cell draws."""
    if xi is None:
        key = as_seed_key(seed)
        xi = generator(SeedKey(key.run_seed, key.round, grid.level, key.sample_index, key.stage_tag)).standard_normal(
            grid.n_cells
        )
    return Field(grid, "node", white_noise_from_cells(grid, np.asarray(xi, dtype=float)))


def draw_cell_noise(grid: GridLevel, key: SeedKey) -> np.ndarray:
    """``2^d`` independent cell-noise vectors, one per boundary combination."""
    return np.stack(
        [generator(key.with_stage(b)).standard_normal(grid.n_cells) for b in range(2**grid.dim)]
    )


def grf_from_cell_noise(grid: GridLevel, cell_noise: np.ndarray, params: MaternParams) -> Field:
    """Boundary-averaged SPDE solve driven by the given ``(2^d, n_cells)`` draws."""
    d = grid.dim
    if params.dim != d:
        raise ConfigError(f"Matern parameters are for d={params.dim}, grid has d={d}")
    lumped = lumped_mass(grid)
    y = np.zeros(grid.n_nodes)
    for b in range(2**d):
        # load vector M_L w = M_L^{1/2} xi
        rhs = np.sqrt(lumped) * nodal_standard_normals(grid, cell_noise[b])
        A, free = _operator(grid, params.kappa, boundary_combo(b, d))
        y[free] += linalg.cg(A, rhs[free], rtol=SPDE_RTOL, stage="spde", dim=d)
    # 2^{-d/2} averaging; the load above is 2^{d/2} times the exact cell-noise load
    y *= 2.0 ** (-d / 2) * params.sigma / math.sqrt(2**d * params.spde_variance)
    return Field(grid, "node", y)


def sample_grf(grid: GridLevel, seed, params: MaternParams) -> Field:
    key = as_seed_key(seed)
    key = SeedKey(key.run_seed, key.round, grid.level, key.sample_index, 0)
    return grf_from_cell_noise(grid, draw_cell_noise(grid, key), params)


def cell_average(y: Field) -> Field:
    """Mean of the ``2^d`` corner values of a nodal field."""
    return Field(y.grid, "cell", node_to_cell(y.grid) @ y.values)


def evaluate(y: Field, points) -> np.ndarray:
    """Evaluate the multilinear nodal field at ``points`` of shape (k, d)."""
    x = np.linspace(0.0, 1.0, y.grid.cells_per_axis + 1)
    interp = RegularGridInterpolator([x] * y.grid.dim, y.values.reshape(y.grid.node_shape))
    return interp(np.atleast_2d(points))
