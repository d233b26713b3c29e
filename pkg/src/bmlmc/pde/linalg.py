"""Thin wrappers over scipy Krylov solvers that raise on non-convergence."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import SolverError


def max_iterations(n: int, dim: int = 2) -> int:
    # Jacobi-CG on 1D grids needs O(n) iterations, so the 2D cap is widened there
    if dim == 1:
        return 2 * n + 100
    return int(10 * np.sqrt(n)) + 100


def _jacobi(A: sp.csr_matrix) -> spla.LinearOperator:
    inv = 1.0 / A.diagonal()
    return spla.LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def _residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(b - A @ x) / nb) if nb > 0 else float(np.linalg.norm(A @ x))


def cg(A, b, *, rtol: float, stage: str, x0=None, precond=None, dim: int = 2) -> np.ndarray:
    if not np.any(b):
        return np.zeros_like(b)
    M = precond if precond is not None else _jacobi(A)
    x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=max_iterations(A.shape[0], dim), M=M)
    if info != 0:
        raise SolverError("CG did not converge", stage=stage, residual=_residual(A, x, b))
    return x


def gmres(A, b, *, rtol: float, stage: str, x0=None, precond=None, restart: int = 30) -> np.ndarray:
    if x0 is not None and np.array_equal(A @ x0, b):
        return np.array(x0, dtype=float)
    M = precond if precond is not None else _jacobi(A)
    x, info = spla.gmres(
        A, b, x0=x0, rtol=rtol, atol=0.0, restart=restart, maxiter=max_iterations(A.shape[0]), M=M
    )
    if info != 0:
        raise SolverError("GMRES did not converge", stage=stage, residual=_residual(A, x, b))
    return x
