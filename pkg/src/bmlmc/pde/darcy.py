"""Lowest-order mixed Darcy solve on uniform grids.

On a uniform Cartesian grid the lowest-order face-flux mixed scheme reduces
to the cell-centred two-point flux system for the pressure: face
transmissibilities use the harmonic mean of the permeability, and the
normal flux on every face follows from the pressure difference.  The flux
field is stored per face as the normal velocity ``q . e_axis``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import DomainError
from ..grid import Field
from . import linalg

DARCY_RTOL = 1e-10

# (axis, side) -> ("dirichlet", pressure) or ("flux", outward normal flux);
# side 0 is the face at x_axis = 0, side 1 the face at x_axis = 1.


def default_boundary(dim: int) -> dict:
    """Pressure 0 at the bottom, inflow ``q.n = -1`` at the top, no flow elsewhere."""
    bc = {}
    for axis in range(dim):
        for side in (0, 1):
            bc[(axis, side)] = ("flux", 0.0)
    bc[(dim - 1, 0)] = ("dirichlet", 0.0)
    bc[(dim - 1, 1)] = ("flux", -1.0)
    return bc


def _slab(arr_ndim: int, axis: int, index) -> tuple:
    sl = [slice(None)] * arr_ndim
    sl[axis] = index
    return tuple(sl)


def _boundary_values(value, shape: tuple[int, ...]) -> np.ndarray:
    if callable(value):
        raise TypeError("boundary values must be scalars or arrays over the boundary faces")
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


def darcy_solve(perm: Field, *, source=None, boundary: dict | None = None) -> tuple[Field, Field]:
    """Solve ``a q + grad p = 0, div q = f`` for the cell field ``a = exp(y)^{-1}``.

    ``source`` holds cell values of ``f`` (integrated with the midpoint rule).
    Returns the face flux field and the cell pressure field.
    """
    grid = perm.grid
    if perm.kind != "cell":
        raise DomainError("permeability must be a cell field")
    a = perm.values.reshape(grid.shape)
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DomainError("permeability reciprocal a must be finite and strictly positive on every cell")
    bc = default_boundary(grid.dim) if boundary is None else boundary
    d, h = grid.dim, grid.mesh_width
    area = h ** (d - 1)
    idx = np.arange(grid.n_cells).reshape(grid.shape)

    rows, cols, vals = [], [], []
    diag = np.zeros(grid.shape)
    rhs = np.zeros(grid.shape)
    if source is not None:
        rhs += np.asarray(source, dtype=float).reshape(grid.shape) * grid.cell_volume
    trans = []  # per axis: transmissibility of every face (interior and boundary)
    for axis in range(d):
        t = np.zeros(grid.face_shape(axis))
        lo = a[_slab(d, axis, slice(None, -1))]
        hi = a[_slab(d, axis, slice(1, None))]
        t_int = area / (0.5 * h * (lo + hi))
        t[_slab(d, axis, slice(1, -1))] = t_int
        i_lo = idx[_slab(d, axis, slice(None, -1))].ravel()
        i_hi = idx[_slab(d, axis, slice(1, None))].ravel()
        rows += [i_lo, i_hi]
        cols += [i_hi, i_lo]
        vals += [-t_int.ravel(), -t_int.ravel()]
        diag[_slab(d, axis, slice(None, -1))] += t_int
        diag[_slab(d, axis, slice(1, None))] += t_int
        for side in (0, 1):
            cell = _slab(d, axis, 0 if side == 0 else -1)
            face = _slab(d, axis, 0 if side == 0 else -1)
            kind, value = bc[(axis, side)]
            bshape = a[cell].shape
            if kind == "dirichlet":
                tb = area / (0.5 * h * a[cell])
                t[face] = tb
                diag[cell] += tb
                rhs[cell] += tb * _boundary_values(value, bshape)
            elif kind == "flux":
                rhs[cell] -= area * _boundary_values(value, bshape)
            else:
                raise ValueError(f"unknown boundary kind {kind!r}")
        trans.append(t)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.n_cells,) * 2
    )
    p = linalg.cg(A, rhs.ravel(), rtol=DARCY_RTOL, stage="darcy", dim=d).reshape(grid.shape)

    fluxes = []
    for axis in range(d):
        q = np.zeros(grid.face_shape(axis))
        lo = p[_slab(d, axis, slice(None, -1))]
        hi = p[_slab(d, axis, slice(1, None))]
        q[_slab(d, axis, slice(1, -1))] = trans[axis][_slab(d, axis, slice(1, -1))] * (lo - hi) / area
        for side in (0, 1):
            cell = _slab(d, axis, 0 if side == 0 else -1)
            face = _slab(d, axis, 0 if side == 0 else -1)
            kind, value = bc[(axis, side)]
            sign = -1.0 if side == 0 else 1.0  # outward normal along the axis
            if kind == "dirichlet":
                outward = trans[axis][face] * (p[cell] - _boundary_values(value, p[cell].shape)) / area
            else:
                outward = _boundary_values(value, p[cell].shape)
            q[face] = sign * outward
        fluxes.append(q.ravel())
    return Field(grid, "face", np.concatenate(fluxes)), Field(grid, "cell", p.ravel())


def face_fluxes(q: Field) -> list[np.ndarray]:
    """Integrated flux ``q . e_axis * |face|`` per axis, arrays of ``face_shape``."""
    area = q.grid.mesh_width ** (q.grid.dim - 1)
    return [q.face_component(axis) * area for axis in range(q.grid.dim)]


def discrete_divergence(q: Field) -> np.ndarray:
    """Net outward flux of every cell (the ``B^T q`` row of the mixed system)."""
    grid = q.grid
    div = np.zeros(grid.shape)
    for axis, f in enumerate(face_fluxes(q)):
        div += f[_slab(grid.dim, axis, slice(1, None))] - f[_slab(grid.dim, axis, slice(None, -1))]
    return div.ravel()
