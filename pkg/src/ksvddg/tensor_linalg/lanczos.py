"""Truncated Kronecker-product SVD via Golub-Kahan-Lanczos bidiagonalization.

The leading singular triplets of the shuffled matrix give the optimal
``r``-term Kronecker approximation in the Frobenius norm.  Only products
with the shuffled matrix and its transpose are needed, so the matrix itself
is never formed.  The recurrence runs on a batch of independent operators
at once; each batch entry stops on its own at breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kron import KroneckerSum
from .shuffle import ShuffledOperator, unvec


@dataclass(frozen=True)
class LanczosConfig:
    """Lanczos parameters.

    Parameters
    ----------
    requested_terms : int
        Number ``r`` of Kronecker terms to return.
    max_iterations : int, optional
        Bidiagonalization steps ``J``; defaults to ``2r + 20``.
    breakdown_tolerance : float
        A new Lanczos vector whose norm falls below this multiple of the
        first ``alpha`` ends the recurrence.
    seed : int
        Seed for the pseudo-random unit starting vector.
    convergence_tolerance : float
        Ritz residuals above this multiple of the leading singular value
        flag the result as unconverged.
    """

    requested_terms: int = 2
    max_iterations: int | None = None
    breakdown_tolerance: float = 1e-12
    seed: int = 0
    convergence_tolerance: float = 1e-8

    def __post_init__(self):
        if self.requested_terms < 1:
            raise ValueError("requested_terms must be >= 1")
        if self.max_iterations is None:
            object.__setattr__(self, "max_iterations", 2 * self.requested_terms + 20)
        if self.max_iterations < self.requested_terms:
            raise ValueError("max_iterations must be >= requested_terms")
        if not self.breakdown_tolerance > 0:
            raise ValueError("breakdown_tolerance must be positive")


@dataclass
class KsvdBatch:
    """Kronecker factors for a batch of operators.

    ``A[b, k]`` has shape ``(m1, n1)`` and ``B[b, k]`` shape ``(m2, n2)``,
    already scaled by ``sqrt(sigma[b, k])``.
    """

    A: np.ndarray
    B: np.ndarray
    sigma: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray

    def term_sum(self, b: int = 0) -> KroneckerSum:
        return KroneckerSum(tuple((self.A[b, k], self.B[b, k]) for k in range(self.A.shape[1])))


@dataclass
class KsvdResult:
    terms: KroneckerSum
    sigma: np.ndarray
    converged: bool
    iterations: int


def _reorthogonalize(r, Q, count):
    # modified Gram-Schmidt, run twice
    for _ in range(2):
        for i in range(count):
            q = Q[:, i]
            r -= np.einsum("bi,bi->b", q, r)[:, None] * q
    return r


def lanczos_batch(op: ShuffledOperator, cfg: LanczosConfig, batch: int | None = None) -> KsvdBatch:
    """Leading ``r`` Kronecker terms for every operator in a batch."""
    nb = batch if batch is not None else (op.batch or 1)
    single = op.batch is None and batch is None
    m, n = op.shape
    r_req = cfg.requested_terms
    J = min(cfg.max_iterations, m, n)

    def A(v):
        return op.apply(v[0])[None] if single else op.apply(v)

    def AT(w):
        return op.apply_transpose(w[0])[None] if single else op.apply_transpose(w)

    rng = np.random.default_rng(cfg.seed)
    v0 = rng.standard_normal(n)
    v0 /= np.linalg.norm(v0)

    V = np.zeros((nb, J + 1, n))
    U = np.zeros((nb, J, m))
    alpha = np.zeros((nb, J))
    beta = np.zeros((nb, J + 1))
    V[:, 0] = v0
    active = np.ones(nb, dtype=bool)
    steps = np.zeros(nb, dtype=int)
    scale = np.zeros(nb)

    for j in range(J):
        r = A(V[:, j])
        if j > 0:
            r -= beta[:, j, None] * U[:, j - 1]
        r = _reorthogonalize(r, U, j)
        a = np.linalg.norm(r, axis=1)
        if j == 0:
            scale = a.copy()
        tol = cfg.breakdown_tolerance * scale
        # a vanishing alpha still closes the bidiagonal with a zero row
        steps[active] = j + 1
        ok = active & (a > tol)
        active = ok
        if not active.any():
            break
        safe_a = np.where(active, a, 1.0)
        alpha[:, j] = np.where(active, a, 0.0)
        U[:, j] = np.where(active[:, None], r / safe_a[:, None], 0.0)

        p = AT(U[:, j]) - alpha[:, j, None] * V[:, j]
        p = _reorthogonalize(p, V, j + 1)
        b = np.linalg.norm(p, axis=1)
        cont = active & (b > tol)
        safe_b = np.where(cont, b, 1.0)
        beta[:, j + 1] = np.where(cont, b, 0.0)
        V[:, j + 1] = np.where(cont[:, None], p / safe_b[:, None], 0.0)
        active = cont
        if not active.any():
            break

    # Project onto span(U_k) x span(V_{k+1}): U_k^T A V_{k+1} = [B_k, beta_{k+1} e_k].
    # The extra column makes the triplets exact once U_k spans the range.
    k = max(int(steps.max()), 1)
    Bmat = np.zeros((nb, k, k + 1))
    idx = np.arange(k)
    Bmat[:, idx, idx] = alpha[:, :k]
    Bmat[:, idx, idx + 1] = beta[:, 1:k + 1]
    Ub, s, Vbt = np.linalg.svd(Bmat, full_matrices=False)
    # residual of A v - sigma u lives in the next left vector, with weight alpha_{k+1}
    r = A(V[:, k]) - beta[:, k, None] * U[:, k - 1]
    a_next = np.linalg.norm(_reorthogonalize(r, U, k), axis=1)

    rr = min(r_req, k)
    left = np.einsum("bjm,bjk->bkm", U[:, :k], Ub[:, :, :rr])
    right = np.einsum("bjn,bkj->bkn", V[:, :k + 1], Vbt[:, :rr, :])
    sig = np.zeros((nb, r_req))
    sig[:, :rr] = s[:, :rr]
    resid = np.abs(a_next[:, None] * Vbt[:, :rr, k])
    converged = np.all(resid <= cfg.convergence_tolerance * np.maximum(s[:, :1], 1e-300), axis=1)

    m1, n1, m2, n2 = op.m1, op.n1, op.m2, op.n2
    Af = np.zeros((nb, r_req, m1, n1))
    Bf = np.zeros((nb, r_req, m2, n2))
    root = np.sqrt(sig[:, :rr])
    Af[:, :rr] = (root[:, :, None] * left).reshape(nb, rr, n1, m1).transpose(0, 1, 3, 2)
    Bf[:, :rr] = (root[:, :, None] * right).reshape(nb, rr, n2, m2).transpose(0, 1, 3, 2)
    return KsvdBatch(Af, Bf, sig, converged, steps)


def lanczos_ksvd(op: ShuffledOperator, cfg: LanczosConfig) -> KsvdResult:
    """Leading ``r`` Kronecker terms of the matrix behind a shuffled operator.

    Returns the factor pairs ``(A_k, B_k)`` with ``vec(A_k) = sqrt(s_k) u_k``
    and ``vec(B_k) = sqrt(s_k) v_k`` along with the singular values.  A zero
    operator gives zero factors with ``s = 0``.  If the recurrence hits
    ``max_iterations`` before the Ritz triplets settle, the best available
    triplets are returned with ``converged=False``.
    """
    if op.batch is not None:
        raise ValueError("use lanczos_batch for batched operators")
    res = lanczos_batch(op, cfg)
    return KsvdResult(res.term_sum(0), res.sigma[0], bool(res.converged[0]), int(res.iterations[0]))


def dense_ksvd(A, m1, n1, m2, n2, r):
    """Reference KSVD from a full SVD of the explicitly shuffled matrix."""
    from .shuffle import shuffle_dense
    U, s, Vt = np.linalg.svd(shuffle_dense(A, m1, n1, m2, n2), full_matrices=False)
    terms = tuple((np.sqrt(s[k]) * unvec(U[:, k], m1, n1), np.sqrt(s[k]) * unvec(Vt[k], m2, n2))
                  for k in range(r))
    return KroneckerSum(terms), s
