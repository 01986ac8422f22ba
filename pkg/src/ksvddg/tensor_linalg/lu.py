"""LU factorization with a singular-pivot guard, wrapping LAPACK getrf."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..errors import ShapeError, SingularMatrixError

PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class LUHandle:
    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]


def lu_factor(A, rtol: float = PIVOT_RTOL) -> LUHandle:
    """Partial-pivoting LU; raises if a pivot falls below ``rtol * ||A||_inf``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"lu_factor needs a square matrix, got {A.shape}")
    anorm = np.abs(A).sum(axis=1).max(initial=0.0)
    with warnings.catch_warnings():
        # an exactly zero pivot is reported below as SingularMatrixError
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    k = int(np.argmin(pivots)) if pivots.size else 0
    if anorm == 0.0 or pivots[k] < rtol * anorm:
        raise SingularMatrixError(f"pivot {k} is {pivots[k]:.3e}, below {rtol:g}*||A||_inf = {rtol * anorm:.3e}")
    return LUHandle(lu, piv)


def lu_solve(handle: LUHandle, b, trans: int = 0) -> np.ndarray:
    """Solve ``A x = b`` (``trans=1``: ``A^T x = b``); ``b`` may have several columns."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != handle.n:
        raise ShapeError(f"right-hand side has {b.shape[0]} rows, expected {handle.n}")
    return sla.lu_solve((handle.lu, handle.piv), b, trans=trans, check_finite=False)


def solve_along_axis(handle: LUHandle, x: np.ndarray, axis: int) -> np.ndarray:
    """Apply ``A^{-1}`` along one axis of a tensor."""
    xm = np.moveaxis(x, axis, 0)
    shp = xm.shape
    y = lu_solve(handle, xm.reshape(shp[0], -1)).reshape(shp)
    return np.moveaxis(y, 0, axis)


def lu_inverse(handle: LUHandle) -> np.ndarray:
    """Explicit inverse from an existing factorization (LAPACK getri)."""
    inv, info = sla.lapack.dgetri(handle.lu, handle.piv)
    if info != 0:
        raise SingularMatrixError(f"getri failed with info={info}")
    return inv
