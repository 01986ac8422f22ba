"""One-dimensional reference element on [0, 1].

Nodes are Gauss-Lobatto points, so the endpoints are nodes and face traces
are plain slices of the coefficient tensor.  ``G[a, j] = phi_j(x_a)`` and
``D[a, j] = phi_j'(x_a)`` at the quadrature points ``x_a``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as leg


def gauss_legendre(n: int):
    """``n``-point Gauss rule on [0, 1]."""
    x, w = leg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_lobatto(n: int):
    """``n``-point Gauss-Lobatto rule on [0, 1] (n >= 2)."""
    if n < 2:
        raise ValueError("Gauss-Lobatto needs at least two points")
    p = n - 1
    if p == 1:
        x = np.array([-1.0, 1.0])
    else:
        dP = leg.Legendre.basis(p).deriv()
        inner = np.sort(dP.roots().real)
        ddP = dP.deriv()
        for _ in range(3):
            inner = inner - dP(inner) / ddP(inner)
        x = np.concatenate(([-1.0], inner, [1.0]))
    Pp = leg.legval(x, np.eye(p + 1)[p])
    w = 2.0 / (p * (p + 1) * Pp ** 2)
    return 0.5 * (x + 1.0), 0.5 * w


def lagrange_matrices(nodes, points):
    """Values and derivatives of the Lagrange basis on ``nodes`` at ``points``."""
    nodes = np.asarray(nodes, dtype=float)
    points = np.asarray(points, dtype=float)
    n = nodes.size
    s = 2.0 * points - 1.0
    V = leg.legvander(2.0 * nodes - 1.0, n - 1)
    Vp = leg.legvander(s, n - 1)
    # d/dx P_k(2x - 1) = 2 P_k'(2x - 1)
    Vd = np.stack([2.0 * leg.legval(s, leg.legder(np.eye(n)[k])) for k in range(n)], axis=1)
    Vinv = np.linalg.inv(V)
    return Vp @ Vinv, Vd @ Vinv


@dataclass(frozen=True)
class ReferenceElement:
    """Nodal basis and quadrature on the unit interval."""

    p: int
    rule: str
    mu: int
    nodes: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    G: np.ndarray
    D: np.ndarray

    @property
    def n(self) -> int:
        return self.p + 1

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.weights)

    def end_values(self, side: int) -> np.ndarray:
        """Row vector of basis values at the endpoint ``side`` (0 or 1)."""
        e = np.zeros((1, self.n))
        e[0, 0 if side == 0 else -1] = 1.0
        return e

    def mass_1d(self) -> np.ndarray:
        return self.G.T @ (self.weights[:, None] * self.G)


def build_reference(p: int, quadrature_rule: str = "gauss", mu: int | None = None) -> ReferenceElement:
    """Reference element of degree ``p`` with ``mu`` quadrature points (default ``p + 2``)."""
    if p < 1:
        raise ValueError("degree must be at least 1")
    mu = p + 2 if mu is None else int(mu)
    if mu < p + 1:
        raise ValueError(f"{mu} quadrature points under-resolve degree {p} (need at least {p + 1})")
    if quadrature_rule == "gauss":
        x, w = gauss_legendre(mu)
    elif quadrature_rule == "gauss_lobatto":
        x, w = gauss_lobatto(mu)
    else:
        raise ValueError(f"unknown quadrature rule {quadrature_rule!r}")
    nodes, _ = gauss_lobatto(p + 1)
    nodes[0], nodes[-1] = 0.0, 1.0
    G, D = lagrange_matrices(nodes, x)
    return ReferenceElement(p, quadrature_rule, mu, nodes, x, w, G, D)
