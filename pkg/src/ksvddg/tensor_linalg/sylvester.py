"""Sylvester solves ``T1 X + X T2^T = B`` with quasi-triangular ``T1``, ``T2``.

In Kronecker form this is ``(T1 (x) I + I (x) T2) vec_C(X) = vec_C(B)`` where
``vec_C`` flattens rows (C order), matching :func:`kron_apply`.  Back
substitution runs over the 1x1/2x2 diagonal blocks of both factors; each
block pair needs a dense solve of size at most 4.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import ShapeError, SylvesterSingularError


@njit(cache=True)
def _blocks(T):
    n = T.shape[0]
    start = np.empty(n, dtype=np.int64)
    size = np.empty(n, dtype=np.int64)
    nb = 0
    i = 0
    while i < n:
        start[nb] = i
        if i + 1 < n and T[i + 1, i] != 0.0:
            size[nb] = 2
            i += 2
        else:
            size[nb] = 1
            i += 1
        nb += 1
    return start[:nb], size[:nb]


@njit(cache=True)
def _small_solve(M, rhs, n, tol):
    # Gaussian elimination with partial pivoting on an n x n system, n <= 4
    for k in range(n):
        piv = k
        big = abs(M[k, k])
        for r in range(k + 1, n):
            if abs(M[r, k]) > big:
                big = abs(M[r, k])
                piv = r
        if big <= tol:
            return False
        if piv != k:
            for c in range(n):
                tmp = M[k, c]
                M[k, c] = M[piv, c]
                M[piv, c] = tmp
            tmp = rhs[k]
            rhs[k] = rhs[piv]
            rhs[piv] = tmp
        for r in range(k + 1, n):
            f = M[r, k] / M[k, k]
            for c in range(k, n):
                M[r, c] -= f * M[k, c]
            rhs[r] -= f * rhs[k]
    for k in range(n - 1, -1, -1):
        s = rhs[k]
        for c in range(k + 1, n):
            s -= M[k, c] * rhs[c]
        rhs[k] = s / M[k, k]
    return True


@njit(cache=True)
def _sylvester_kernel(T1, T2, B, tol):
    nbatch, n1, n2 = B.shape
    X = np.zeros_like(B)
    s1, z1 = _blocks(T1)
    s2, z2 = _blocks(T2)
    M = np.zeros((4, 4))
    rhs = np.zeros(4)
    C = np.zeros((2, n2))
    for b in range(nbatch):
        for bi in range(s1.size - 1, -1, -1):
            i0 = s1[bi]
            si = z1[bi]
            # C = B_I - T1[I, I+:] X[I+:, :]
            for r in range(si):
                for c in range(n2):
                    acc = B[b, i0 + r, c]
                    for k in range(i0 + si, n1):
                        acc -= T1[i0 + r, k] * X[b, k, c]
                    C[r, c] = acc
            # transposed problem: T2 Y + Y S = C^T, Y = X_I^T, S = T1[I, I]^T
            for bk in range(s2.size - 1, -1, -1):
                k0 = s2[bk]
                sk = z2[bk]
                nsys = sk * si
                for q in range(4):
                    rhs[q] = 0.0
                    for w in range(4):
                        M[q, w] = 0.0
                # unknown Y[k0+a, r] stored at a + sk*r (column-major)
                for r in range(si):
                    for a in range(sk):
                        row = a + sk * r
                        acc = C[r, k0 + a]
                        for kk in range(k0 + sk, n2):
                            acc -= T2[k0 + a, kk] * X[b, i0 + r, kk]
                        rhs[row] = acc
                        for a2 in range(sk):
                            M[row, a2 + sk * r] += T2[k0 + a, k0 + a2]
                        for r2 in range(si):
                            # (Y S)[a, r] = sum_r2 Y[a, r2] S[r2, r], S[r2, r] = T1[i0+r, i0+r2]
                            M[row, a + sk * r2] += T1[i0 + r, i0 + r2]
                if not _small_solve(M, rhs, nsys, tol):
                    return X, bi, bk
                for r in range(si):
                    for a in range(sk):
                        X[b, i0 + r, k0 + a] = rhs[a + sk * r]
    return X, -1, -1


def _check_quasi_triangular(T, name):
    T = np.ascontiguousarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ShapeError(f"{name} must be square, got {T.shape}")
    n = T.shape[0]
    if n > 2 and np.any(np.tril(T, -2) != 0.0):
        raise ValueError(f"{name} is not quasi-upper-triangular")
    sub = np.diag(T, -1)
    if np.any((sub[:-1] != 0.0) & (sub[1:] != 0.0)):
        raise ValueError(f"{name} has overlapping 2x2 blocks")
    return T


def sylvester_solve(T1, T2, B, rtol: float = 1e-14) -> np.ndarray:
    """Solve ``T1 X + X T2^T = B``.

    ``B`` may carry leading batch axes; every slice shares ``T1`` and ``T2``.
    A diagonal block pair whose eigenvalues nearly cancel raises
    :class:`SylvesterSingularError` naming the block indices.
    """
    T1 = _check_quasi_triangular(T1, "T1")
    T2 = _check_quasi_triangular(T2, "T2")
    B = np.asarray(B, dtype=float)
    n1, n2 = T1.shape[0], T2.shape[0]
    if B.shape[-2:] != (n1, n2):
        raise ShapeError(f"right-hand side shape {B.shape} does not match ({n1}, {n2})")
    lead = B.shape[:-2]
    Bb = np.ascontiguousarray(B.reshape(-1, n1, n2))
    scale = np.abs(T1).max(initial=0.0) + np.abs(T2).max(initial=0.0)
    tol = rtol * max(scale, 1e-300)
    X, bi, bk = _sylvester_kernel(T1, T2, Bb, tol)
    if bi >= 0:
        raise SylvesterSingularError(
            f"diagonal block {bi} of T1 and block {bk} of T2 have eigenvalues summing to ~0",
            block=(int(bi), int(bk)))
    return X.reshape(*lead, n1, n2)


@njit(cache=True)
def _sylvester_batched_kernel(T1s, T2s, B, tols):
    X = np.zeros_like(B)
    for e in range(B.shape[0]):
        Xe, bi, bk = _sylvester_kernel(T1s[e], T2s[e], B[e], tols[e])
        if bi >= 0:
            return X, e, bi, bk
        X[e] = Xe
    return X, -1, -1, -1


def sylvester_solve_batched(T1s, T2s, B, rtol: float = 1e-14) -> np.ndarray:
    """Independent Sylvester solves, one quasi-triangular pair per leading index.

    ``T1s`` is ``(ne, n1, n1)``, ``T2s`` is ``(ne, n2, n2)`` and ``B`` is
    ``(ne, ..., n1, n2)``.  The quasi-triangular structure is trusted (the
    pairs normally come straight from :func:`real_schur`).  On failure the
    raised error carries ``block=(e, bi, bk)``.
    """
    T1s = np.ascontiguousarray(T1s, dtype=float)
    T2s = np.ascontiguousarray(T2s, dtype=float)
    B = np.asarray(B, dtype=float)
    ne, n1, n2 = T1s.shape[0], T1s.shape[-1], T2s.shape[-1]
    if T2s.shape[0] != ne or B.shape[0] != ne or B.shape[-2:] != (n1, n2):
        raise ShapeError(f"batched Sylvester shapes do not conform: {T1s.shape}, {T2s.shape}, {B.shape}")
    shape = B.shape
    Bb = np.ascontiguousarray(B.reshape(ne, -1, n1, n2))
    scale = np.abs(T1s).max(axis=(1, 2), initial=0.0) + np.abs(T2s).max(axis=(1, 2), initial=0.0)
    tols = rtol * np.maximum(scale, 1e-300)
    X, e, bi, bk = _sylvester_batched_kernel(T1s, T2s, Bb, tols)
    if e >= 0:
        raise SylvesterSingularError(
            f"entry {e}: diagonal block {bi} of T1 and block {bk} of T2 have eigenvalues summing to ~0",
            block=(int(e), int(bi), int(bk)))
    return X.reshape(shape)
