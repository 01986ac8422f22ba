"""Kronecker sums and their application by sum factorization.

Ordering convention: for ``A (x) B`` acting on a vector ``v`` flattened in
C order from a tensor ``X[i, j]``, the first factor acts on the slow axis
``i`` and the last factor on the fast axis ``j``, i.e. ``(A (x) B) v`` is
``(A X B^T).ravel()``.  This matches ``np.kron``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from ..errors import ShapeError


def as_small_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


@dataclass(frozen=True)
class KroneckerSum:
    """Sum of ``r`` Kronecker products, each with ``d`` small dense factors."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(tuple(as_small_matrix(f) for f in t) for t in self.terms)
        if not terms:
            raise ShapeError("a Kronecker sum needs at least one term")
        d = len(terms[0])
        shapes = [f.shape for f in terms[0]]
        for t in terms[1:]:
            if len(t) != d or [f.shape for f in t] != shapes:
                raise ShapeError("all terms must share factor shapes")
        object.__setattr__(self, "terms", terms)

    @property
    def dimension(self) -> int:
        return len(self.terms[0])

    @property
    def rank(self) -> int:
        return len(self.terms)

    @property
    def factor_shapes(self):
        return [f.shape for f in self.terms[0]]

    @property
    def shape(self):
        rows = int(np.prod([s[0] for s in self.factor_shapes]))
        cols = int(np.prod([s[1] for s in self.factor_shapes]))
        return rows, cols

    def to_dense(self) -> np.ndarray:
        return sum(reduce(np.kron, t) for t in self.terms)


def tensor_apply(x: np.ndarray, mats) -> np.ndarray:
    """Apply one matrix per trailing axis of ``x``.

    ``mats`` lists the matrices for the last ``len(mats)`` axes, slowest
    first; ``None`` leaves an axis untouched.  Leading axes are batch axes.
    """
    d = len(mats)
    lead = x.ndim - d
    for j, m in enumerate(mats):
        if m is None:
            continue
        ax = lead + j
        x = np.moveaxis(np.tensordot(m, x, axes=([1], [ax])), 0, ax)
    return x


def kron_apply(terms: KroneckerSum, v) -> np.ndarray:
    """Return ``sum_t (F_t1 (x) ... (x) F_td) v`` without forming the product."""
    v = np.asarray(v, dtype=float)
    rows, cols = terms.shape
    if v.ndim != 1 or v.size != cols:
        raise ShapeError(f"vector of length {v.size} does not match operator with {cols} columns")
    x = v.reshape([s[1] for s in terms.factor_shapes])
    out = np.zeros([s[0] for s in terms.factor_shapes])
    for t in terms.terms:
        out += tensor_apply(x, t)
    return out.ravel()
