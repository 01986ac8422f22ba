"""Real Schur factorization ``C = Q T Q^T`` for small dense matrices.

Householder reduction to Hessenberg form followed by the Francis
double-shift QR iteration.  Converged 2x2 diagonal blocks are put in
standard form: complex pairs get equal diagonal entries, real pairs are
split into two 1x1 blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numba import njit

from ..errors import SchurConvergenceError

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SchurPair:
    Q: np.ndarray
    T: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.Q @ self.T @ self.Q.T


@njit(cache=True)
def _sign(a, b):
    return abs(a) if b >= 0.0 else -abs(a)


@njit(cache=True)
def _hessenberg(H, Z):
    n = H.shape[0]
    for k in range(n - 2):
        m = n - k - 1
        v = np.empty(m)
        alpha = 0.0
        for i in range(m):
            v[i] = H[k + 1 + i, k]
            alpha += v[i] * v[i]
        alpha = math.sqrt(alpha)
        if alpha == 0.0:
            continue
        if v[0] > 0.0:
            alpha = -alpha
        v[0] -= alpha
        vn = 0.0
        for i in range(m):
            vn += v[i] * v[i]
        if vn == 0.0:
            continue
        vn = math.sqrt(vn)
        for i in range(m):
            v[i] /= vn
        # H <- P H P with P = I - 2 v v^T on indices k+1..n-1
        for j in range(n):
            s = 0.0
            for i in range(m):
                s += v[i] * H[k + 1 + i, j]
            s *= 2.0
            for i in range(m):
                H[k + 1 + i, j] -= s * v[i]
        for i in range(n):
            s = 0.0
            for jj in range(m):
                s += H[i, k + 1 + jj] * v[jj]
            s *= 2.0
            for jj in range(m):
                H[i, k + 1 + jj] -= s * v[jj]
            s = 0.0
            for jj in range(m):
                s += Z[i, k + 1 + jj] * v[jj]
            s *= 2.0
            for jj in range(m):
                Z[i, k + 1 + jj] -= s * v[jj]
        H[k + 1, k] = alpha
        for i in range(k + 2, n):
            H[i, k] = 0.0


@njit(cache=True)
def _reflect_rows(H, r0, nr, v, c0, c1):
    for j in range(c0, c1):
        s = 0.0
        for i in range(nr):
            s += v[i] * H[r0 + i, j]
        s *= 2.0
        for i in range(nr):
            H[r0 + i, j] -= s * v[i]


@njit(cache=True)
def _reflect_cols(H, c0, nc, v, r0, r1):
    for i in range(r0, r1):
        s = 0.0
        for j in range(nc):
            s += H[i, c0 + j] * v[j]
        s *= 2.0
        for j in range(nc):
            H[i, c0 + j] -= s * v[j]


@njit(cache=True)
def _house(x, nr):
    v = np.zeros(3)
    a = 0.0
    for i in range(nr):
        a += x[i] * x[i]
    a = math.sqrt(a)
    if a == 0.0:
        return v, False
    for i in range(nr):
        v[i] = x[i]
    v[0] += _sign(a, x[0])
    vn = 0.0
    for i in range(nr):
        vn += v[i] * v[i]
    vn = math.sqrt(vn)
    for i in range(nr):
        v[i] /= vn
    return v, True


@njit(cache=True)
def _francis(H, Z, l, i, r1r, r1i, r2r, r2i):
    n = H.shape[0]
    # first column of (H - s1)(H - s2), scaled, without forming s1 + s2 and s1 s2
    sc = abs(H[l, l] - r2r) + abs(r2i) + abs(H[l + 1, l])
    h21 = H[l + 1, l] / sc
    x = h21 * H[l, l + 1] + (H[l, l] - r1r) * ((H[l, l] - r2r) / sc) - r1i * (r2i / sc)
    y = h21 * (H[l, l] + H[l + 1, l + 1] - r1r - r2r)
    z = h21 * H[l + 2, l + 1]
    buf = np.zeros(3)
    for k in range(l, i - 1):
        buf[0] = x
        buf[1] = y
        buf[2] = z
        v, ok = _house(buf, 3)
        if ok:
            c0 = max(k - 1, l)
            _reflect_rows(H, k, 3, v, c0, n)
            r1 = min(k + 4, i + 1)
            _reflect_cols(H, k, 3, v, 0, r1)
            _reflect_cols(Z, k, 3, v, 0, n)
            if k > l:
                H[k + 1, k - 1] = 0.0
                H[k + 2, k - 1] = 0.0
        x = H[k + 1, k]
        y = H[k + 2, k]
        if k < i - 2:
            z = H[k + 3, k]
    buf[0] = x
    buf[1] = y
    buf[2] = 0.0
    v, ok = _house(buf, 2)
    if ok:
        k = i - 1
        _reflect_rows(H, k, 2, v, max(k - 1, l), n)
        _reflect_cols(H, k, 2, v, 0, i + 1)
        _reflect_cols(Z, k, 2, v, 0, n)
        if k > l:
            H[k + 1, k - 1] = 0.0


@njit(cache=True)
def _standardize(a, b, c, d):
    eps = 2.220446049250313e-16
    if c == 0.0:
        cs, sn = 1.0, 0.0
    elif b == 0.0:
        cs, sn = 0.0, 1.0
        temp = d
        d = a
        a = temp
        b = -c
        c = 0.0
    elif (a - d) == 0.0 and _sign(1.0, b) != _sign(1.0, c):
        cs, sn = 1.0, 0.0
    else:
        temp = a - d
        p = 0.5 * temp
        bcmax = max(abs(b), abs(c))
        bcmis = min(abs(b), abs(c)) * _sign(1.0, b) * _sign(1.0, c)
        scale = max(abs(p), bcmax)
        z = (p / scale) * p + (bcmax / scale) * bcmis
        if z >= 4.0 * eps:
            # real eigenvalues
            z = p + _sign(math.sqrt(scale) * math.sqrt(z), p)
            a = d + z
            d = d - (bcmax / z) * bcmis
            tau = math.hypot(c, z)
            cs = z / tau
            sn = c / tau
            b = b - c
            c = 0.0
        else:
            sigma = b + c
            tau = math.hypot(sigma, temp)
            cs = math.sqrt(0.5 * (1.0 + abs(sigma) / tau))
            sn = -(p / (tau * cs)) * _sign(1.0, sigma)
            aa = a * cs + b * sn
            bb = -a * sn + b * cs
            cc = c * cs + d * sn
            dd = -c * sn + d * cs
            a = aa * cs + cc * sn
            b = bb * cs + dd * sn
            c = -aa * sn + cc * cs
            d = -bb * sn + dd * cs
            temp = 0.5 * (a + d)
            a = temp
            d = temp
            if c != 0.0:
                if b != 0.0:
                    if _sign(1.0, b) == _sign(1.0, c):
                        sab = math.sqrt(abs(b))
                        sac = math.sqrt(abs(c))
                        p = _sign(sab * sac, c)
                        tau = 1.0 / math.sqrt(abs(b + c))
                        a = temp + p
                        d = temp - p
                        b = b - c
                        c = 0.0
                        cs1 = sab * tau
                        sn1 = sac * tau
                        temp = cs * cs1 - sn * sn1
                        sn = cs * sn1 + sn * cs1
                        cs = temp
                else:
                    b = -c
                    c = 0.0
                    temp = cs
                    cs = -sn
                    sn = temp
    return a, b, c, d, cs, sn


@njit(cache=True)
def _rot_rows(H, r0, r1, cs, sn, c0, c1):
    for j in range(c0, c1):
        x = H[r0, j]
        y = H[r1, j]
        H[r0, j] = cs * x + sn * y
        H[r1, j] = cs * y - sn * x


@njit(cache=True)
def _rot_cols(H, c0, c1, cs, sn, r0, r1):
    for i in range(r0, r1):
        x = H[i, c0]
        y = H[i, c1]
        H[i, c0] = cs * x + sn * y
        H[i, c1] = cs * y - sn * x


@njit(cache=True)
def _shifts(H, l, i, its):
    """The two shifts ``(re1, im1, re2, im2)`` for the next sweep.

    Exceptional shifts every 10 sweeps without deflation; a real pair of
    trailing eigenvalues is replaced by the one nearer ``H[i, i]``, used
    twice (as in LAPACK's dlahqr).
    """
    if its % 20 == 0:
        ss = abs(H[l + 1, l]) + abs(H[l + 2, l + 1])
        h11 = 0.75 * ss + H[l, l]
        h12 = -0.4375 * ss
        h21 = ss
        h22 = h11
    elif its % 10 == 0:
        ss = abs(H[i, i - 1]) + abs(H[i - 1, i - 2])
        h11 = 0.75 * ss + H[i, i]
        h12 = -0.4375 * ss
        h21 = ss
        h22 = h11
    else:
        h11 = H[i - 1, i - 1]
        h21 = H[i, i - 1]
        h12 = H[i - 1, i]
        h22 = H[i, i]
    sc = abs(h11) + abs(h12) + abs(h21) + abs(h22)
    if sc == 0.0:
        return 0.0, 0.0, 0.0, 0.0
    h11 /= sc
    h21 /= sc
    h12 /= sc
    h22 /= sc
    tr = 0.5 * (h11 + h22)
    det = (h11 - tr) * (h22 - tr) - h12 * h21
    rtdisc = math.sqrt(abs(det))
    if det >= 0.0:
        return tr * sc, rtdisc * sc, tr * sc, -rtdisc * sc
    r1 = tr + rtdisc
    r2 = tr - rtdisc
    r = r1 if abs(r1 - h22) <= abs(r2 - h22) else r2
    return r * sc, 0.0, r * sc, 0.0


@njit(cache=True)
def _schur_kernel(C, max_sweeps):
    n = C.shape[0]
    H = C.copy()
    Z = np.eye(n)
    if n == 1:
        return H, Z, 0, 0
    _hessenberg(H, Z)
    eps = 2.220446049250313e-16
    hnorm = 0.0
    for i in range(n):
        for j in range(n):
            hnorm += abs(H[i, j])
    if hnorm == 0.0:
        return H, Z, 0, 0
    i = n - 1
    its = 0
    total = 0
    while i >= 0:
        l = i
        while l > 0:
            s = abs(H[l - 1, l - 1]) + abs(H[l, l])
            if s == 0.0:
                s = hnorm
            if abs(H[l, l - 1]) <= eps * s:
                break
            l -= 1
        if l > 0:
            H[l, l - 1] = 0.0
        if l == i:
            i -= 1
            its = 0
            continue
        if l == i - 1:
            a, b, c, d, cs, sn = _standardize(H[i - 1, i - 1], H[i - 1, i], H[i, i - 1], H[i, i])
            _rot_rows(H, i - 1, i, cs, sn, i + 1, n)
            _rot_cols(H, i - 1, i, cs, sn, 0, i - 1)
            _rot_cols(Z, i - 1, i, cs, sn, 0, n)
            H[i - 1, i - 1] = a
            H[i - 1, i] = b
            H[i, i - 1] = c
            H[i, i] = d
            i -= 2
            its = 0
            continue
        if total >= max_sweeps:
            return H, Z, 1, i
        its += 1
        total += 1
        r1r, r1i, r2r, r2i = _shifts(H, l, i, its)
        _francis(H, Z, l, i, r1r, r1i, r2r, r2i)
    for j in range(n):
        for k in range(j + 2, n):
            H[k, j] = 0.0
    return H, Z, 0, 0


def real_schur(C, max_sweeps: int | None = None) -> SchurPair:
    """Real Schur form of a square matrix.

    Parameters
    ----------
    C : (n, n) array_like
    max_sweeps : int, optional
        Budget of QR sweeps; defaults to ``30 * max(n, 10)``.

    Returns
    -------
    SchurPair
        Orthogonal ``Q`` and quasi-upper-triangular ``T`` with ``C = Q T Q^T``.
    """
    C = np.ascontiguousarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"real_schur needs a square matrix, got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("real_schur input has non-finite entries")
    n = C.shape[0]
    budget = max_sweeps if max_sweeps is not None else 30 * max(n, 10)
    T, Q, status, row = _schur_kernel(C, budget)
    if status:
        raise SchurConvergenceError(
            f"QR iteration did not converge within {budget} sweeps "
            f"(n={n}, unreduced row {row}, |C|_F={np.linalg.norm(C):.3e})")
    return SchurPair(Q, T)


def diagonal_blocks(T: np.ndarray):
    """Start index and size of each 1x1 / 2x2 diagonal block of ``T``."""
    n = T.shape[0]
    out = []
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            out.append((i, 2))
            i += 2
        else:
            out.append((i, 1))
            i += 1
    return out


def schur_eigenvalues(T: np.ndarray) -> np.ndarray:
    ev = []
    for i, s in diagonal_blocks(T):
        if s == 1:
            ev.append(complex(T[i, i]))
        else:
            ev.extend(np.linalg.eigvals(T[i:i + 2, i:i + 2]))
    return np.array(ev)
