"""Element-block preconditioners for ``M - dt J``.

* :class:`BlockJacobiPC` factors every assembled diagonal block exactly.
* :class:`KsvdPC2D` replaces each block by its best two-term Kronecker
  approximation ``A1 x B1 + A2 x B2`` and solves with it through a
  Sylvester equation in real Schur coordinates.
* :class:`KsvdPC3D` uses ``A1 x (B1 x C1 + B2 x C2)``: a one-term split
  of the block followed by a two-term split of the trailing factor.

All preconditioners act on flat global vectors and keep wall-clock
counters for formation and application.  Elements whose Kronecker factors
cannot be inverted fall back to exact block Jacobi; each such event is
recorded in ``fallback_log``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .errors import (BlockBudgetError, KsvdFactorError, SchurConvergenceError, SingularMatrixError,
                     SylvesterSingularError)
from .operators.blocks import DEFAULT_ENTRY_BUDGET, BlockTerms, block_terms
from .tensor_linalg import (LanczosConfig, ShuffledOperator, lanczos_batch, lu_factor, lu_inverse,
                            real_schur, sylvester_solve_batched)

log = logging.getLogger(__name__)

KINDS = ("none", "jacobi_full", "jacobi_small", "ksvd_full", "ksvd_small")

# relative size of the second singular value below which one term is used
SINGLE_TERM_RTOL = 1e-12
_CHUNK_ENTRIES = 2 ** 24


@dataclass(frozen=True)
class FallbackEvent:
    element: int
    component: int | None
    reason: str


def _inverse(A) -> np.ndarray:
    return lu_inverse(lu_factor(A))


def _block_owner(b: int, nc_split: int):
    """Map a block index to (element, component or None)."""
    if nc_split == 1:
        return b, None
    return b // nc_split, b % nc_split


class Preconditioner:
    """Common bookkeeping: timers, fallback log and the flat-vector interface."""

    kind = "none"

    def __init__(self, disc):
        self.disc = disc
        self.form_seconds = 0.0
        self.apply_seconds = 0.0
        self.applications = 0
        self.fallback_log: list[FallbackEvent] = []

    def _apply(self, b: np.ndarray) -> np.ndarray:
        return b.copy()

    def apply(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.disc.size,):
            raise ValueError(f"expected a vector of length {self.disc.size}, got shape {b.shape}")
        t0 = time.perf_counter()
        x = self._apply(b)
        self.apply_seconds += time.perf_counter() - t0
        self.applications += 1
        return x

    __call__ = apply


class IdentityPC(Preconditioner):
    kind = "none"


def _terms_for(lin, mode: str) -> tuple[BlockTerms, int]:
    terms = block_terms(lin, mode)
    if mode == "small":
        return terms.split_components(), terms.nc
    return terms, 1


def _dense_inverses(terms: BlockTerms, idx, budget, split) -> np.ndarray:
    """Assemble and invert the blocks ``idx`` in memory-bounded chunks."""
    N = terms.size
    if N * N > budget:
        raise BlockBudgetError(f"dense block of {N}x{N} entries exceeds the budget of {budget}")
    idx = np.asarray(idx, dtype=int)
    out = np.empty((idx.size, N, N))
    step = max(1, _CHUNK_ENTRIES // (N * N))
    for s in range(0, idx.size, step):
        chunk = idx[s:s + step]
        blocks = terms.assemble(chunk, budget)
        for j, b in enumerate(chunk):
            try:
                out[s + j] = _inverse(blocks[j])
            except SingularMatrixError as exc:
                e, c = _block_owner(int(b), split)
                where = f"element {e}" + ("" if c is None else f", component {c}")
                err = SingularMatrixError(f"diagonal block of {where} is singular "
                                          f"(time step too large or degenerate geometry): {exc}")
                err.element = e
                raise err from exc
    return out


class BlockJacobiPC(Preconditioner):
    """Exact inverse of every diagonal block (``mode`` ``full`` or ``small``)."""

    def __init__(self, lin, mode: str = "full", budget: int = DEFAULT_ENTRY_BUDGET):
        super().__init__(lin.disc)
        t0 = time.perf_counter()
        self.kind = f"jacobi_{mode}"
        self.mode = mode
        terms, self.split = _terms_for(lin, mode)
        self.block_size = terms.size
        self.inverses = _dense_inverses(terms, np.arange(terms.batch), budget, self.split)
        self.form_seconds = time.perf_counter() - t0

    def _apply(self, b):
        X = b.reshape(self.inverses.shape[0], self.block_size, 1)
        return np.matmul(self.inverses, X).ravel()


# ---------------------------------------------------------------------------
# two-term Kronecker solves
# ---------------------------------------------------------------------------

class _TwoTermSolver:
    """Batched solver for ``(L1 x R1 + L2 x R2) x = b``.

    Formation keeps ``L2^{-1}``, ``R1^{-1}`` and the Schur pairs of
    ``L2^{-1} L1`` and ``R1^{-1} R2``.  Entries whose second term is
    negligible keep ``L1^{-1}``, ``R1^{-1}`` only.  ``failures`` lists the
    entries that could not be factored, with the reason.
    """

    def __init__(self, L1, R1, L2, R2, single):
        nb, m, n = L1.shape[0], L1.shape[-1], R1.shape[-1]
        self.Linv = np.zeros((nb, m, m))
        self.Rinv = np.zeros((nb, n, n))
        self.failures: dict[int, str] = {}
        two, Q1, T1, Q2, T2 = [], [], [], [], []
        probe_rhs = np.ones((1, m, n))
        for b in range(nb):
            try:
                if single[b]:
                    self.Linv[b] = _inverse(L1[b])
                    self.Rinv[b] = _inverse(R1[b])
                    continue
                self.Linv[b] = _inverse(L2[b])
                self.Rinv[b] = _inverse(R1[b])
                s1 = real_schur(self.Linv[b] @ L1[b])
                s2 = real_schur(self.Rinv[b] @ R2[b])
                # catches a singular Sylvester operator now instead of mid-GMRES
                sylvester_solve_batched(s1.T[None], s2.T[None], probe_rhs[None])
            except (SingularMatrixError, SchurConvergenceError) as exc:
                kind = "sylvester" if isinstance(exc, SylvesterSingularError) else type(exc).__name__
                self.failures[b] = f"{kind}: {exc}"
                continue
            two.append(b)
            Q1.append(s1.Q)
            T1.append(s1.T)
            Q2.append(s2.Q)
            T2.append(s2.T)
        self.two = np.asarray(two, dtype=int)
        shape1, shape2 = (0, m, m), (0, n, n)
        self.Q1 = np.asarray(Q1).reshape(-1, m, m) if two else np.zeros(shape1)
        self.T1 = np.asarray(T1).reshape(-1, m, m) if two else np.zeros(shape1)
        self.Q2 = np.asarray(Q2).reshape(-1, n, n) if two else np.zeros(shape2)
        self.T2 = np.asarray(T2).reshape(-1, n, n) if two else np.zeros(shape2)

    def solve(self, X):
        """``X`` is ``(nb, ..., m, n)``; entries listed in ``failures`` are ignored."""
        extra = X.ndim - 3
        expand = (slice(None),) + (None,) * extra
        Linv, Rinv = self.Linv[expand], self.Rinv[expand]
        Y = np.matmul(np.matmul(Linv, X), np.swapaxes(Rinv, -1, -2))
        if self.two.size:
            t = self.two
            Q1, Q2 = self.Q1[expand], self.Q2[expand]
            Z = np.matmul(np.matmul(np.swapaxes(Q1, -1, -2), Y[t]), Q2)
            Z = sylvester_solve_batched(self.T1, self.T2, Z)
            Y[t] = np.matmul(np.matmul(Q1, Z), np.swapaxes(Q2, -1, -2))
        return Y


class _KroneckerPC(Preconditioner):
    """Shared fallback handling for the Kronecker preconditioners."""

    def _install_fallbacks(self, terms: BlockTerms, failures: dict, budget: int, on_failure: str):
        if failures and on_failure == "raise":
            b = min(failures)
            e, c = _block_owner(b, self.split)
            raise KsvdFactorError(f"element {e}: Kronecker factors cannot be inverted ({failures[b]}); "
                                  "use block Jacobi for this element", element=e)
        self.fallback = np.array(sorted(failures), dtype=int)
        for b in self.fallback:
            e, c = _block_owner(int(b), self.split)
            self.fallback_log.append(FallbackEvent(e, c, failures[int(b)]))
            log.warning("element %d%s: Kronecker factor failed (%s); using block Jacobi",
                        e, "" if c is None else f" component {c}", failures[int(b)])
        self.fallback_inverses = (_dense_inverses(terms, self.fallback, budget, self.split)
                                  if self.fallback.size else None)

    def _apply_fallbacks(self, Xflat, out):
        if self.fallback.size:
            out[self.fallback] = np.matmul(self.fallback_inverses, Xflat[self.fallback, :, None])[..., 0]
        return out


def _lanczos_config(terms: int, seed: int, max_iterations=None) -> LanczosConfig:
    return LanczosConfig(requested_terms=terms, max_iterations=max_iterations, seed=seed)


class KsvdPC2D(_KroneckerPC):
    """Two-term Kronecker preconditioner for 2D blocks.

    Parameters
    ----------
    lin : LinearizedOperator
    mode : {"full", "small"}
        ``small`` approximates one scalar block per component.
    terms : int
        Number of Kronecker terms (1 or 2; default 2).
    on_failure : {"fallback", "raise"}
        What to do with elements whose factors cannot be inverted: use
        their exact block (logged in ``fallback_log``) or raise
        :class:`KsvdFactorError`.
    """

    def __init__(self, lin, mode: str = "full", terms: int = 2, seed: int = 0,
                 max_iterations=None, budget: int = DEFAULT_ENTRY_BUDGET, on_failure: str = "fallback"):
        if lin.disc.d != 2:
            raise ValueError("KsvdPC2D needs a 2-d discretization")
        if terms not in (1, 2):
            raise ValueError("only one- or two-term Kronecker preconditioners can be inverted")
        super().__init__(lin.disc)
        t0 = time.perf_counter()
        self.kind = f"ksvd_{mode}"
        self.mode = mode
        bt, self.split = _terms_for(lin, mode)
        self.blocking = bt.blocking
        m1, n1, m2, n2 = self.blocking
        op = ShuffledOperator(m1, n1, m2, n2, bt.shuffled_apply, bt.shuffled_apply_T, batch=bt.batch)
        res = lanczos_batch(op, _lanczos_config(terms, seed, max_iterations))
        self.A, self.B, self.sigma = res.A, res.B, res.sigma
        self.lanczos_converged = res.converged
        self.lanczos_iterations = res.iterations
        single = (np.ones(bt.batch, dtype=bool) if terms == 1
                  else self.sigma[:, 1] <= SINGLE_TERM_RTOL * self.sigma[:, 0])
        self.single = single
        A2 = self.A[:, 1] if terms == 2 else self.A[:, 0]
        B2 = self.B[:, 1] if terms == 2 else self.B[:, 0]
        self.solver = _TwoTermSolver(self.A[:, 0], self.B[:, 0], A2, B2, single)
        self._install_fallbacks(bt, self.solver.failures, budget, on_failure)
        self.form_seconds = time.perf_counter() - t0

    def approximation(self, b: int) -> np.ndarray:
        """Dense ``sum_k A_k x B_k`` for block ``b``."""
        return sum(np.kron(self.A[b, k], self.B[b, k]) for k in range(self.A.shape[1]))

    def _apply(self, b):
        m1, _, m2, _ = self.blocking
        nb = self.A.shape[0]
        Y = self.solver.solve(b.reshape(nb, m1, m2)).reshape(nb, -1)
        return self._apply_fallbacks(b.reshape(nb, -1), Y).ravel()


class KsvdPC3D(_KroneckerPC):
    """``A1 x (B1 x C1 + B2 x C2)`` preconditioner for 3D blocks.

    Stage one takes the leading Kronecker term ``A1 x D1`` of the block
    from the matrix-free shuffled products.  Stage two splits ``D1`` into
    two terms using products with its (small) explicit shuffle.
    """

    def __init__(self, lin, mode: str = "full", terms: int = 2, seed: int = 0,
                 max_iterations=None, budget: int = DEFAULT_ENTRY_BUDGET, on_failure: str = "fallback"):
        if lin.disc.d != 3:
            raise ValueError("KsvdPC3D needs a 3-d discretization")
        if terms not in (1, 2):
            raise ValueError("only one- or two-term Kronecker preconditioners can be inverted")
        super().__init__(lin.disc)
        t0 = time.perf_counter()
        self.kind = f"ksvd_{mode}"
        self.mode = mode
        bt, self.split = _terms_for(lin, mode)
        self.blocking = bt.blocking
        m1, n1, m2, n2 = self.blocking
        n = bt.n
        op = ShuffledOperator(m1, n1, m2, n2, bt.shuffled_apply, bt.shuffled_apply_T, batch=bt.batch)
        stage1 = lanczos_batch(op, _lanczos_config(1, seed, max_iterations))
        self.A1 = stage1.A[:, 0]
        self.D1 = stage1.B[:, 0]
        self.sigma1 = stage1.sigma[:, 0]
        op2 = ShuffledOperator.from_dense(self.D1, n, n, n, n)
        stage2 = lanczos_batch(op2, _lanczos_config(terms, seed, max_iterations))
        self.Bf, self.Cf, self.sigma2 = stage2.A, stage2.B, stage2.sigma
        self.lanczos_converged = stage1.converged & stage2.converged
        single = (np.ones(bt.batch, dtype=bool) if terms == 1
                  else self.sigma2[:, 1] <= SINGLE_TERM_RTOL * self.sigma2[:, 0])
        self.single = single
        failures: dict[int, str] = {}
        self.A1inv = np.zeros_like(self.A1)
        for b in range(bt.batch):
            try:
                self.A1inv[b] = _inverse(self.A1[b])
            except SingularMatrixError as exc:
                failures[b] = f"A1: {exc}"
        B2 = self.Bf[:, 1] if terms == 2 else self.Bf[:, 0]
        C2 = self.Cf[:, 1] if terms == 2 else self.Cf[:, 0]
        self.solver = _TwoTermSolver(self.Bf[:, 0], self.Cf[:, 0], B2, C2, single)
        for b, why in self.solver.failures.items():
            failures.setdefault(b, why)
        self._install_fallbacks(bt, failures, budget, on_failure)
        self.form_seconds = time.perf_counter() - t0

    def approximation(self, b: int) -> np.ndarray:
        D = sum(np.kron(self.Bf[b, k], self.Cf[b, k]) for k in range(self.Bf.shape[1]))
        return np.kron(self.A1[b], D)

    def _apply(self, b):
        m1, _, _, _ = self.blocking
        nb = self.A1.shape[0]
        n = self.Bf.shape[-1]
        X = b.reshape(nb, m1, n * n)
        X = np.matmul(self.A1inv, X).reshape(nb, m1, n, n)
        Y = self.solver.solve(X).reshape(nb, -1)
        return self._apply_fallbacks(b.reshape(nb, -1), Y).ravel()


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------

def form_block_jacobi(lin, mode: str = "full", **kw) -> BlockJacobiPC:
    return BlockJacobiPC(lin, mode, **kw)


def form_ksvd_2d(lin, mode: str = "full", **kw) -> KsvdPC2D:
    return KsvdPC2D(lin, mode, **kw)


def form_ksvd_3d(lin, mode: str = "full", **kw) -> KsvdPC3D:
    return KsvdPC3D(lin, mode, **kw)


def apply_ksvd_2d(pc: KsvdPC2D, b) -> np.ndarray:
    return pc.apply(b)


def apply_ksvd_3d(pc: KsvdPC3D, b) -> np.ndarray:
    return pc.apply(b)


def make_preconditioner(kind: str, lin, **kw) -> Preconditioner:
    """Build a preconditioner by name (one of :data:`KINDS`)."""
    if kind not in KINDS:
        raise ValueError(f"unknown preconditioner {kind!r}; choose from {KINDS}")
    if kind == "none":
        return IdentityPC(lin.disc)
    family, mode = kind.split("_")
    if family == "jacobi":
        return BlockJacobiPC(lin, mode, **kw)
    cls = KsvdPC2D if lin.disc.d == 2 else KsvdPC3D
    return cls(lin, mode, **kw)
