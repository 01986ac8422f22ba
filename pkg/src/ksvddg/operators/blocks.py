"""Element diagonal blocks of ``M - dt J`` as sums of separable terms.

Every contribution to a diagonal block (mass, one volume term per
reference direction, one face term per local face) has the form

    A[c, I, c', K] = sum_a coef[c, c', a] prod_ax L_ax[a_ax, I_ax] R_ax[a_ax, K_ax]

over a tensor grid of quadrature points ``a``.  Face terms use a single
point along the normal axis with ``L = R =`` the endpoint basis values.
The same description yields the dense block (oracle and block Jacobi) and
matrix-free products with the shuffled block.

Shuffled blocking: the slow part is ``(component, slowest tensor axis)``
of size ``m1 = nc (p+1)``; the fast part is the remaining axes,
``m2 = (p+1)^(d-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dg_core.mesh import face_dir_side
from ..errors import BlockBudgetError, ShapeError

DEFAULT_ENTRY_BUDGET = 2 ** 27


@dataclass
class BlockTerms:
    """Separable description of a batch of diagonal blocks.

    ``coefs[t]`` has shape ``(batch, nc, nc, g_0, ..., g_{d-1})`` and
    ``mats[t][ax] = (L, R)`` with ``L, R`` of shape ``(g_ax, n)``.
    """

    coefs: list
    mats: list
    nc: int
    n: int
    d: int

    @property
    def batch(self) -> int:
        return self.coefs[0].shape[0]

    @property
    def size(self) -> int:
        return self.nc * self.n ** self.d

    @property
    def blocking(self):
        m1 = self.nc * self.n
        m2 = self.n ** (self.d - 1)
        return m1, m1, m2, m2

    def subset(self, idx) -> "BlockTerms":
        idx = np.atleast_1d(idx)
        return BlockTerms([c[idx] for c in self.coefs], self.mats, self.nc, self.n, self.d)

    def split_components(self) -> "BlockTerms":
        """One scalar block per (element, component), dropping coupling."""
        coefs = []
        for c in self.coefs:
            diag = np.diagonal(c, axis1=1, axis2=2)             # (b, g..., nc)
            diag = np.moveaxis(diag, -1, 1)                     # (b, nc, g...)
            coefs.append(diag.reshape((-1, 1, 1) + c.shape[3:]))
        return BlockTerms(coefs, self.mats, 1, self.n, self.d)

    # ------------------------------------------------------------- assembly
    def assemble(self, idx=None, budget: int = DEFAULT_ENTRY_BUDGET) -> np.ndarray:
        """Dense blocks, shape ``(batch, N, N)``."""
        N = self.size
        if N * N > budget:
            raise BlockBudgetError(f"dense block of {N}x{N} entries exceeds the budget of {budget}")
        coefs = self.coefs if idx is None else [c[np.atleast_1d(idx)] for c in self.coefs]
        b = coefs[0].shape[0]
        d = self.d
        out = np.zeros((b, N, N))
        perm = [0, 1] + [3 + 2 * a for a in range(d)] + [2] + [4 + 2 * a for a in range(d)]
        for coef, mats in zip(coefs, self.mats):
            T = coef
            for L, R in mats:
                X = L[:, :, None] * R[:, None, :]
                T = np.tensordot(T, X, axes=([3], [0]))
            out += T.transpose(perm).reshape(b, N, N)
        return out

    # ------------------------------------------------------ shuffled products
    def _check(self, x, length):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != length:
            raise ShapeError(f"vector of length {x.shape[-1]} does not match {length}")
        return x

    def shuffled_apply(self, v, idx=None) -> np.ndarray:
        """``Ã v`` for each block; ``v`` has shape ``(batch, m2*n2)``."""
        m1, n1, m2, n2 = self.blocking
        v = self._check(v, m2 * n2)
        coefs = self.coefs if idx is None else [c[np.atleast_1d(idx)] for c in self.coefs]
        b = coefs[0].shape[0]
        n, nc, d = self.n, self.nc, self.d
        V = v.reshape(b, n2, m2).transpose(0, 2, 1)
        out = np.zeros((b, nc, n, nc, n))
        for coef, mats in zip(coefs, self.mats):
            if d == 2:
                L1, R1 = mats[1]
                y = np.einsum("bak,ak->ba", np.matmul(L1, V), R1)
            else:
                (L1, R1), (L2, R2) = mats[1], mats[2]
                V4 = V.reshape(b, n, n, n, n)
                T = np.einsum("ai,bijkl->bajkl", L1, V4, optimize=True)
                T = np.einsum("bajkl,ak->bajl", T, R1)
                T = np.einsum("cj,bajl->bacl", L2, T, optimize=True)
                y = np.einsum("bacl,cl->bac", T, R2)
            Z = np.einsum("bCDga,ba->bCDg" if d == 2 else "bCDgac,bac->bCDg", coef, y)
            L0, R0 = mats[0]
            Z = np.einsum("bCDg,gi->bCDgi", Z, L0)
            out += np.einsum("bCDgi,gk->bCiDk", Z, R0, optimize=True)
        return out.reshape(b, m1, n1).transpose(0, 2, 1).reshape(b, -1)

    def shuffled_apply_T(self, w, idx=None) -> np.ndarray:
        """``Ã^T w`` for each block; ``w`` has shape ``(batch, m1*n1)``."""
        m1, n1, m2, n2 = self.blocking
        w = self._check(w, m1 * n1)
        coefs = self.coefs if idx is None else [c[np.atleast_1d(idx)] for c in self.coefs]
        b = coefs[0].shape[0]
        n, nc, d = self.n, self.nc, self.d
        W = w.reshape(b, n1, m1).transpose(0, 2, 1).reshape(b, nc, n, nc, n)
        out = np.zeros((b, n, n) if d == 2 else (b, n, n, n, n))
        for coef, mats in zip(coefs, self.mats):
            L0, R0 = mats[0]
            Z = np.einsum("bCiDk,gi->bCDgk", W, L0, optimize=True)
            Z = np.einsum("bCDgk,gk->bCDg", Z, R0)
            z = np.einsum("bCDga,bCDg->ba" if d == 2 else "bCDgac,bCDg->bac", coef, Z)
            if d == 2:
                L1, R1 = mats[1]
                out += np.einsum("ai,bak->bik", L1, z[:, :, None] * R1[None], optimize=True)
            else:
                (L1, R1), (L2, R2) = mats[1], mats[2]
                S = np.einsum("bac,cj->bacj", z, L2)
                S = np.einsum("bacj,cl->bajl", S, R2, optimize=True)
                S = np.einsum("bajl,ak->bajkl", S, R1)
                out += np.einsum("ai,bajkl->bijkl", L1, S, optimize=True)
        V = out.reshape(b, m2, n2)
        return V.transpose(0, 2, 1).reshape(b, -1)


def block_terms(lin, mode: str = "full") -> BlockTerms:
    """Separable terms of every element's diagonal block of ``M - dt J``.

    ``mode="small"`` drops all inter-component coupling (the coefficient
    arrays keep their full shape with off-diagonal entries zeroed; use
    :meth:`BlockTerms.split_components` for per-component blocks).
    """
    if mode not in ("full", "small"):
        raise ValueError(f"unknown block mode {mode!r}")
    disc = lin.disc
    d, nc, n = disc.d, disc.nc, disc.n
    G, D = disc.G, disc.D
    eye = np.eye(nc)
    nel = disc.mesh.nel
    coefs, mats = [], []

    mass = disc.detw[:, None, None] * eye.reshape((1, nc, nc) + (1,) * d)
    coefs.append(mass)
    mats.append([(G, G)] * d)
    if lin.dt != 0.0:
        for k in range(d):
            c = -lin.dt * np.moveaxis(lin.Avol[..., k, :, :], (-2, -1), (1, 2))
            coefs.append(c)
            m = [(G, G)] * d
            m[d - 1 - k] = (D, G)
            mats.append(m)
        for f in range(2 * d):
            k, side = face_dir_side(f)
            ax = d - 1 - k
            c = lin.dt * np.moveaxis(lin.dL[:, f], (-2, -1), (1, 2))
            c = np.expand_dims(c, 3 + ax)
            e = np.zeros((1, n))
            e[0, 0 if side == 0 else n - 1] = 1.0
            m = [(G, G)] * d
            m[ax] = (e, e)
            coefs.append(c)
            mats.append(m)
    if mode == "small":
        mask = eye.reshape((1, nc, nc) + (1,) * d)
        coefs = [c * mask for c in coefs]
    assert all(c.shape[0] == nel for c in coefs)
    return BlockTerms(coefs, mats, nc, n, d)


def assemble_diag_block(lin, element: int, mode: str = "full", budget: int = DEFAULT_ENTRY_BUDGET):
    """Dense diagonal block of one element.

    Full mode returns one ``nc (p+1)^d`` square matrix; small mode returns
    a list of ``nc`` per-component ``(p+1)^d`` blocks.
    """
    terms = block_terms(lin, mode)
    if not 0 <= element < terms.batch:
        raise IndexError(f"element {element} out of range")
    if mode == "full":
        return terms.assemble([element], budget)[0]
    return list(terms.subset([element]).split_components().assemble(budget=budget))


def shuffled_apply(lin, element: int, v, mode: str = "full") -> np.ndarray:
    return block_terms(lin, mode).shuffled_apply(np.asarray(v)[None], [element])[0]


def shuffled_apply_T(lin, element: int, w, mode: str = "full") -> np.ndarray:
    return block_terms(lin, mode).shuffled_apply_T(np.asarray(w)[None], [element])[0]
