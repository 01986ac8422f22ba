"""Global DG operators built on sum factorization.

The semi-discrete system is ``M du/dt = r(u)`` with

    r(u)_i = sum_k int F~_k(u) d_k phi_i  -  sum_faces int F^ |N| phi_i,

where ``F~_k = |det T'| (T'^{-1})_{km} F_m`` is the contravariant flux on
the reference element.  Implicit steps need ``(M - dt J) v`` with
``J = dr/du``; that product is evaluated matrix-free from a linearization
computed once per state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..dg_core.mesh import MeshGeometry, face_dir_side, orient_apply, rebuild
from ..dg_core.reference import build_reference
from ..errors import PcgConvergenceError, ShapeError, StaleLinearizationError
from ..tensor_linalg import tensor_apply


def _outer_weights(w, d):
    out = w
    for _ in range(d - 1):
        out = np.multiply.outer(out, w)
    return out


def state_hash(u: np.ndarray, *extra) -> str:
    h = hashlib.blake2b(np.ascontiguousarray(u).view(np.uint8), digest_size=16)
    for x in extra:
        h.update(repr(float(x)).encode())
    return h.hexdigest()


class Discretization:
    """Residual, mass and Jacobian actions for one law on one mesh.

    ``exterior(x, t)`` supplies the outside trace on boundary faces.
    States are flat arrays in the layout ``(element, component, i_d, ..., i_1)``.
    """

    def __init__(self, mesh: MeshGeometry, law, exterior=None):
        if law.d != mesh.d:
            raise ShapeError(f"law is {law.d}-d but mesh is {mesh.d}-d")
        self.mesh = mesh
        self.law = law
        self.exterior = exterior
        self.ref = mesh.ref
        self.d = mesh.d
        self.nc = law.nc
        self.p = self.ref.p
        self.n = self.ref.n
        self.shape = (mesh.nel, self.nc) + (self.n,) * self.d
        self.size = int(np.prod(self.shape))
        ref = self.ref
        self.G, self.D = ref.G, ref.D
        self.wvol = _outer_weights(ref.weights, self.d)
        self.wface = _outer_weights(ref.weights, self.d - 1)
        self.detw = mesh.det * self.wvol
        self.face_scale = mesh.area * self.wface
        self.unit_normal = mesh.unit_normal
        if mesh.boundary_groups and exterior is None:
            raise ValueError("mesh has boundary faces but no exterior data was given")
        self._collocation = None

    # ------------------------------------------------------------------ utils
    def tensor(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.size != self.size:
            raise ShapeError(f"state of length {u.size} does not match {self.size}")
        return u.reshape(self.shape)

    def to_points(self, U) -> np.ndarray:
        """Coefficients -> values at volume points, component axis last."""
        return np.moveaxis(tensor_apply(U, [self.G] * self.d), 1, -1)

    def face_slice(self, f):
        k, side = face_dir_side(f)
        sl = [slice(None)] * (2 + self.d)
        sl[2 + self.d - 1 - k] = 0 if side == 0 else self.n - 1
        return tuple(sl)

    def traces(self, U) -> np.ndarray:
        """Face values at face points, shape ``(nel, 2d, nc, mu, ...)``."""
        G = [self.G] * (self.d - 1)
        return np.stack([tensor_apply(U[self.face_slice(f)], G) for f in range(2 * self.d)], axis=1)

    def neighbor_traces(self, T) -> np.ndarray:
        """Exterior traces from neighbors (zero on boundary faces)."""
        out = np.zeros_like(T)
        for f, nf, o, es, nbs in self.mesh.interior_groups:
            out[es, f] = orient_apply(T[nbs, nf], o, self.d)
        return out

    def lift(self, R, Fh):
        """Subtract face integrals ``Fh`` (nel, 2d, nc, mu...) from ``R``."""
        GT = [self.G.T] * (self.d - 1)
        for f in range(2 * self.d):
            R[self.face_slice(f)] -= tensor_apply(Fh[:, f], GT)
        return R

    def volume_integral(self, Ft, R):
        """Add ``sum_k int Ft_k d_k phi`` for ``Ft`` shaped (nel, mu..., nc, d)."""
        d = self.d
        for k in range(d):
            mats = [self.G.T] * d
            mats[d - 1 - k] = self.D.T
            R += tensor_apply(np.moveaxis(Ft[..., k], -1, 1), mats)
        return R

    # --------------------------------------------------------------- residual
    def exterior_traces(self, uL_pt, t):
        """Exterior state at every face point, component axis last."""
        uR = np.moveaxis(self.neighbor_traces(np.moveaxis(uL_pt, -1, 2)), 2, -1)
        for f, tag, es in self.mesh.boundary_groups:
            uR[es, f] = self.exterior(self.mesh.x_face[es, f], t)
        return uR

    def residual(self, u, t: float = 0.0) -> np.ndarray:
        U = self.tensor(u)
        m = self.mesh
        Uq = self.to_points(U)
        F = self.law.flux(Uq, m.x_vol)
        Ft = np.einsum("...cm,...km->...ck", F, m.metric) * self.wvol[..., None, None]
        R = self.volume_integral(Ft, np.zeros(self.shape))
        uL = np.moveaxis(self.traces(U), 2, -1)
        uR = self.exterior_traces(uL, t)
        Fh = self.law.numerical_flux(uL, uR, self.unit_normal, m.x_face) * self.face_scale[..., None]
        return self.lift(R, np.moveaxis(Fh, -1, 2)).ravel()

    # ------------------------------------------------------------------- mass
    def mass_apply(self, v) -> np.ndarray:
        V = self.tensor(v)
        Vq = tensor_apply(V, [self.G] * self.d)
        return tensor_apply(Vq * self.detw[:, None], [self.G.T] * self.d).ravel()

    def _collocation_factors(self):
        if self._collocation is None:
            refc = build_reference(self.p, "gauss", self.p + 1)
            meshc = rebuild(self.mesh, refc)
            jw = meshc.det * _outer_weights(refc.weights, self.d)
            self._collocation = (np.linalg.inv(refc.G), np.linalg.inv(refc.G.T), 1.0 / jw)
        return self._collocation

    def mass_preconditioner(self, r) -> np.ndarray:
        """Inverse of the collocated mass matrix, exact on affine elements."""
        Ginv, GTinv, inv_jw = self._collocation_factors()
        R = r.reshape(self.shape)
        Y = tensor_apply(R, [GTinv] * self.d) * inv_jw[:, None]
        return tensor_apply(Y, [Ginv] * self.d).reshape(r.shape)

    def mass_solve(self, b, tol: float = 1e-12, max_iter: int = 200, return_iterations: bool = False):
        """Solve ``M x = b`` element by element with preconditioned CG."""
        B = self.tensor(b).reshape(self.mesh.nel, -1)
        apply = lambda X: self.mass_apply(X.ravel()).reshape(B.shape)
        prec = lambda X: self.mass_preconditioner(X.ravel()).reshape(B.shape)
        X = np.zeros_like(B)
        R = B.copy()
        target = tol * np.linalg.norm(B, axis=1)
        Z = prec(R)
        P = Z.copy()
        rz = np.einsum("ei,ei->e", R, Z)
        iters = np.zeros(self.mesh.nel, dtype=int)
        active = np.linalg.norm(R, axis=1) > target
        it = 0
        while active.any():
            if it >= max_iter:
                raise PcgConvergenceError(f"mass PCG did not converge in {max_iter} iterations",
                                          x=X.ravel(), history=[float(np.linalg.norm(R))])
            AP = apply(P)
            pap = np.einsum("ei,ei->e", P, AP)
            alpha = np.where(active, rz / np.where(active, pap, 1.0), 0.0)
            X += alpha[:, None] * P
            R -= alpha[:, None] * AP
            it += 1
            iters[active] = it
            active &= np.linalg.norm(R, axis=1) > target
            Z = prec(R)
            rz_new = np.einsum("ei,ei->e", R, Z)
            beta = np.where(active, rz_new / np.where(rz != 0.0, rz, 1.0), 0.0)
            P = Z + beta[:, None] * P
            rz = rz_new
        x = X.ravel()
        return (x, iters) if return_iterations else x

    # ---------------------------------------------------------- linearization
    def linearize(self, u, t: float = 0.0, dt: float = 0.0) -> "LinearizedOperator":
        """Pre-compute flux Jacobians at volume and face points for ``u``."""
        U = self.tensor(u)
        m = self.mesh
        Uq = self.to_points(U)
        A = self.law.flux_jacobian(Uq, m.x_vol)                      # (..., m, c, c')
        At = np.einsum("...km,...mcq->...kcq", m.metric, A) * self.wvol[..., None, None, None]
        uL = np.moveaxis(self.traces(U), 2, -1)
        uR = self.exterior_traces(uL, t)
        dL, dR = self.law.numerical_flux_jacobians(uL, uR, self.unit_normal, m.x_face)
        s = self.face_scale[..., None, None]
        dL = dL * s
        dR = dR * s
        for f, tag, es in m.boundary_groups:
            dR[es, f] = 0.0
        return LinearizedOperator(self, float(t), float(dt), state_hash(np.asarray(u), t), At, dL, dR)

    # ---------------------------------------------------------------- helpers
    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x) -> (..., nc)``."""
        vals = func(self.mesh.x_nodes)
        return np.moveaxis(vals, -1, 1).ravel()

    def l2_error(self, u, func, t: float = 0.0, component: int = 0) -> float:
        Uq = self.to_points(self.tensor(u))
        ex = func(self.mesh.x_vol, t)
        diff = Uq[..., component] - ex[..., component]
        return float(np.sqrt(np.sum(self.detw * diff ** 2)))

    def l2_norm(self, u, component: int = 0) -> float:
        """Quadrature L2 norm of one component of a discrete field."""
        Uq = self.to_points(self.tensor(u))
        return float(np.sqrt(np.sum(self.detw * Uq[..., component] ** 2)))

    def conservation_defect(self, r) -> np.ndarray:
        """Component-wise integral of the residual against the constant test function."""
        R = self.tensor(r)
        return R.sum(axis=tuple([0] + list(range(2, 2 + self.d))))


@dataclass
class LinearizedOperator:
    """Action of ``M - dt J`` at a fixed state.

    ``Avol[e, a..., k, c, c']`` holds the weighted contravariant flux
    Jacobians; ``dL``/``dR`` the numerical-flux derivatives scaled by face
    area and weights, shape ``(e, f, a..., c, c')``.
    """

    disc: Discretization
    t: float
    dt: float
    state_hash: str
    Avol: np.ndarray
    dL: np.ndarray
    dR: np.ndarray

    @property
    def shape(self):
        return self.disc.size, self.disc.size

    def check(self, u, t=None):
        if state_hash(np.asarray(u), self.t if t is None else t) != self.state_hash:
            raise StaleLinearizationError("linearization was built from a different state")

    def apply_J(self, v) -> np.ndarray:
        disc = self.disc
        V = disc.tensor(v)
        Vq = disc.to_points(V)
        Ft = np.einsum("...kcq,...q->...ck", self.Avol, Vq)
        R = disc.volume_integral(Ft, np.zeros(disc.shape))
        vL = disc.traces(V)
        vR = disc.neighbor_traces(vL)
        vL = np.moveaxis(vL, 2, -1)
        vR = np.moveaxis(vR, 2, -1)
        Fh = np.einsum("...cq,...q->...c", self.dL, vL) + np.einsum("...cq,...q->...c", self.dR, vR)
        return disc.lift(R, np.moveaxis(Fh, -1, 2)).ravel()

    def apply(self, v) -> np.ndarray:
        out = self.disc.mass_apply(v)
        if self.dt != 0.0:
            out -= self.dt * self.apply_J(v)
        return out

    __call__ = apply


def jacobian_apply(lin: LinearizedOperator, v, state=None) -> np.ndarray:
    """``(M - dt J) v``; passing ``state`` verifies the linearization is current."""
    if state is not None:
        lin.check(state)
    return lin.apply(v)
