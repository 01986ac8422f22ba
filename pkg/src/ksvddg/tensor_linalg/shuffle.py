"""Van Loan shuffle rearrangement and the abstract shuffled operator.

``vec`` stacks columns throughout this module.  For ``A`` viewed as an
``m1 x n1`` grid of ``m2 x n2`` blocks ``A_ij``, the shuffled matrix has
row ``j*m1 + i`` equal to ``vec(A_ij)^T``.  With this layout
``A = sum_k A_k (x) B_k`` if and only if
``shuffle(A) = sum_k vec(A_k) vec(B_k)^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ShapeError


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")


def _check_blocking(shape, m1, n1, m2, n2):
    if min(m1, n1, m2, n2) < 1 or shape[-2:] != (m1 * m2, n1 * n2):
        raise ShapeError(f"matrix of shape {shape[-2:]} cannot be blocked as "
                         f"{m1}x{n1} blocks of size {m2}x{n2}")


def shuffle_dense(A, m1: int, n1: int, m2: int, n2: int) -> np.ndarray:
    """Rearrange ``A`` (or a stack of them) into its shuffled form."""
    A = np.asarray(A, dtype=float)
    _check_blocking(A.shape, m1, n1, m2, n2)
    lead = A.shape[:-2]
    k = len(lead)
    t = A.reshape(*lead, m1, m2, n1, n2)
    perm = list(range(k)) + [k + 2, k, k + 3, k + 1]
    return t.transpose(perm).reshape(*lead, n1 * m1, n2 * m2)


def unshuffle_dense(At, m1: int, n1: int, m2: int, n2: int) -> np.ndarray:
    """Inverse of :func:`shuffle_dense`."""
    At = np.asarray(At, dtype=float)
    if At.shape[-2:] != (n1 * m1, n2 * m2):
        raise ShapeError(f"shuffled matrix shape {At.shape[-2:]} does not match blocking")
    lead = At.shape[:-2]
    k = len(lead)
    t = At.reshape(*lead, n1, m1, n2, m2)
    perm = list(range(k)) + [k + 1, k + 3, k, k + 2]
    return t.transpose(perm).reshape(*lead, m1 * m2, n1 * n2)


@dataclass(frozen=True)
class ShuffledOperator:
    """Matrix-free access to a shuffled matrix ``Ã`` of shape ``(m1*n1, m2*n2)``.

    ``apply`` and ``apply_transpose`` accept arrays whose last axis is the
    vector axis; any leading axes are treated as a batch (one operator per
    batch entry, ``batch`` of them).
    """

    m1: int
    n1: int
    m2: int
    n2: int
    apply: Callable[[np.ndarray], np.ndarray]
    apply_transpose: Callable[[np.ndarray], np.ndarray]
    batch: int | None = None

    @property
    def shape(self):
        return self.m1 * self.n1, self.m2 * self.n2

    @classmethod
    def from_dense(cls, A, m1, n1, m2, n2) -> "ShuffledOperator":
        """Wrap an explicit matrix (or a stack ``(nb, M, N)``)."""
        At = shuffle_dense(A, m1, n1, m2, n2)
        if At.ndim == 2:
            return cls(m1, n1, m2, n2, lambda v: At @ v, lambda w: At.T @ w)
        AtT = np.swapaxes(At, -1, -2)
        return cls(m1, n1, m2, n2,
                   lambda v: np.einsum("bij,bj->bi", At, v),
                   lambda w: np.einsum("bij,bj->bi", AtT, w),
                   batch=At.shape[0])
