"""Fluxes, flux Jacobians and numerical fluxes for advection and Euler.

Pointwise arrays carry the component axis last: a state has shape
``(..., nc)``, a physical flux ``(..., nc, d)`` and a flux Jacobian
``(..., d, nc, nc)`` with entry ``[m, c, c']`` = dF_m[c] / du[c'].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonPhysicalStateError
from .dg_core.mesh import MeshSpec

GAMMA = 1.4


class Law:
    """Interface shared by the conservation laws."""

    nc: int
    d: int
    linear: bool = False
    name: str = ""

    def flux(self, u, x):
        raise NotImplementedError

    def flux_jacobian(self, u, x):
        raise NotImplementedError

    def numerical_flux(self, uL, uR, n, x):
        raise NotImplementedError

    def numerical_flux_jacobians(self, uL, uR, n, x):
        """Return ``(dF/du^-, dF/du^+)``, each of shape ``(..., nc, nc)``."""
        raise NotImplementedError

    def normal_flux(self, u, n, x):
        return np.einsum("...cm,...m->...c", self.flux(u, x), n)


# ----------------------------------------------------------------------------
# scalar advection
# ----------------------------------------------------------------------------

def _vel_a(x):
    # constant; the third entry is only used for 3D meshes
    return np.broadcast_to(np.array([1.0, 2.0, 1.0])[: x.shape[-1]], x.shape).copy()


def _vel_b(x):
    return np.stack([x[..., 0] - 0.5, 0.5 - x[..., 1]], axis=-1)


def _vel_c(x):
    return np.stack([x[..., 1] - 0.5, 0.5 - x[..., 0]], axis=-1)


VELOCITY_FIELDS = {"a": _vel_a, "b": _vel_b, "c": _vel_c}
FIELDS_3D = ("a",)


class AdvectionLaw(Law):
    """``u_t + div(v(x) u) = 0`` with the upwind flux."""

    nc = 1
    d = 2
    linear = True

    def __init__(self, field_id: str, d: int = 2):
        if field_id not in VELOCITY_FIELDS:
            raise ValueError(f"unknown velocity field {field_id!r}; choose from {sorted(VELOCITY_FIELDS)}")
        if d not in (2, 3) or (d == 3 and field_id not in FIELDS_3D):
            raise ValueError(f"velocity field {field_id!r} is not defined in {d}-d")
        self.d = d
        self.field_id = field_id
        self.velocity = VELOCITY_FIELDS[field_id]
        self.name = f"advection-{field_id}"

    def flux(self, u, x):
        return u[..., :, None] * self.velocity(x)[..., None, :]

    def flux_jacobian(self, u, x):
        v = self.velocity(x)
        return np.broadcast_to(v[..., :, None, None], u.shape[:-1] + (self.d, 1, 1)).copy()

    def numerical_flux(self, uL, uR, n, x):
        vn = np.einsum("...m,...m->...", self.velocity(x), n)[..., None]
        return np.where(vn > 0.0, vn * uL, vn * uR)

    def numerical_flux_jacobians(self, uL, uR, n, x):
        vn = np.einsum("...m,...m->...", self.velocity(x), n)[..., None, None]
        return np.maximum(vn, 0.0), np.minimum(vn, 0.0)


def advection_law(field_id: str, d: int = 2) -> AdvectionLaw:
    return AdvectionLaw(field_id, d)


# ----------------------------------------------------------------------------
# compressible Euler
# ----------------------------------------------------------------------------

class EulerLaw(Law):
    """Compressible Euler equations with the local Lax-Friedrichs flux.

    Conserved variables ``(rho, rho v_1..rho v_d, E)``.
    """

    linear = False

    def __init__(self, d: int = 2, gamma: float = GAMMA):
        if d not in (2, 3):
            raise ValueError("Euler law supports d = 2 or 3")
        self.d = d
        self.nc = d + 2
        self.gamma = float(gamma)
        self.name = f"euler{d}d"

    def primitive(self, u, check: bool = True):
        rho = u[..., 0]
        vel = u[..., 1:1 + self.d] / rho[..., None]
        p = (self.gamma - 1.0) * (u[..., -1] - 0.5 * rho * np.sum(vel * vel, axis=-1))
        if check:
            bad = ~((rho > 0.0) & (p > 0.0))
            if np.any(bad):
                loc = tuple(int(i) for i in np.argwhere(bad)[0])
                raise NonPhysicalStateError(
                    f"non-physical state at index {loc}: rho={rho[loc]:.3e}, p={p[loc]:.3e}", location=loc)
        return rho, vel, p

    def conserved(self, rho, vel, p):
        rho = np.asarray(rho, dtype=float)
        vel = np.asarray(vel, dtype=float)
        E = p / (self.gamma - 1.0) + 0.5 * rho * np.sum(vel * vel, axis=-1)
        return np.concatenate([rho[..., None], rho[..., None] * vel, np.asarray(E)[..., None]], axis=-1)

    def sound_speed(self, rho, p):
        return np.sqrt(self.gamma * p / rho)

    def flux(self, u, x=None):
        d = self.d
        rho, vel, p = self.primitive(u)
        F = np.empty(u.shape + (d,))
        F[..., 0, :] = u[..., 1:1 + d]
        F[..., 1:1 + d, :] = u[..., 1:1 + d, None] * vel[..., None, :]
        for k in range(d):
            F[..., 1 + k, k] += p
        F[..., -1, :] = (u[..., -1] + p)[..., None] * vel
        return F

    def _dvel_dp(self, u, rho, vel):
        # d v_k / d u_c and d p / d u_c
        d, g = self.d, self.gamma
        sh = u.shape[:-1]
        dv = np.zeros(sh + (d, self.nc))
        dv[..., :, 0] = -vel / rho[..., None]
        for k in range(d):
            dv[..., k, 1 + k] = 1.0 / rho
        dp = np.zeros(sh + (self.nc,))
        dp[..., 0] = 0.5 * (g - 1.0) * np.sum(vel * vel, axis=-1)
        dp[..., 1:1 + d] = -(g - 1.0) * vel
        dp[..., -1] = g - 1.0
        return dv, dp

    def flux_jacobian(self, u, x=None):
        d, nc = self.d, self.nc
        rho, vel, p = self.primitive(u)
        dv, dp = self._dvel_dp(u, rho, vel)
        A = np.zeros(u.shape[:-1] + (d, nc, nc))
        eye = np.eye(nc)
        for m in range(d):
            A[..., m, 0, :] = eye[1 + m]
            for k in range(d):
                A[..., m, 1 + k, :] = vel[..., m, None] * eye[1 + k] + u[..., 1 + k, None] * dv[..., m, :]
                if k == m:
                    A[..., m, 1 + k, :] += dp
            A[..., m, -1, :] = vel[..., m, None] * (eye[-1] + dp) + (u[..., -1] + p)[..., None] * dv[..., m, :]
        return A

    def _wave_speed(self, u, n):
        rho, vel, p = self.primitive(u)
        vn = np.einsum("...m,...m->...", vel, n)
        c = self.sound_speed(rho, p)
        return np.abs(vn) + c, rho, vel, p, vn, c

    def _wave_speed_grad(self, u, n, rho, vel, p, vn, c):
        dv, dp = self._dvel_dp(u, rho, vel)
        dvn = np.einsum("...kc,...k->...c", dv, n)
        dc = (self.gamma / (2.0 * c * rho))[..., None] * (dp - (p / rho)[..., None] * np.eye(self.nc)[0])
        return np.sign(vn)[..., None] * dvn + dc

    def numerical_flux(self, uL, uR, n, x=None):
        sL = self._wave_speed(uL, n)[0]
        sR = self._wave_speed(uR, n)[0]
        lam = np.maximum(sL, sR)[..., None]
        return 0.5 * (self.normal_flux(uL, n, x) + self.normal_flux(uR, n, x)) + 0.5 * lam * (uL - uR)

    def numerical_flux_jacobians(self, uL, uR, n, x=None):
        sL, rL, vL, pL, vnL, cL = self._wave_speed(uL, n)
        sR, rR, vR, pR, vnR, cR = self._wave_speed(uR, n)
        left_wins = sL >= sR
        lam = np.where(left_wins, sL, sR)
        AL = np.einsum("...mcd,...m->...cd", self.flux_jacobian(uL), n)
        AR = np.einsum("...mcd,...m->...cd", self.flux_jacobian(uR), n)
        eye = np.eye(self.nc)
        jump = uL - uR
        gL = np.where(left_wins[..., None], self._wave_speed_grad(uL, n, rL, vL, pL, vnL, cL), 0.0)
        gR = np.where(left_wins[..., None], 0.0, self._wave_speed_grad(uR, n, rR, vR, pR, vnR, cR))
        dL = 0.5 * AL + 0.5 * lam[..., None, None] * eye + 0.5 * jump[..., :, None] * gL[..., None, :]
        dR = 0.5 * AR - 0.5 * lam[..., None, None] * eye + 0.5 * jump[..., :, None] * gR[..., None, :]
        return dL, dR


def euler_law(d: int = 2, gamma: float = GAMMA) -> EulerLaw:
    return EulerLaw(d, gamma)


# ----------------------------------------------------------------------------
# test cases
# ----------------------------------------------------------------------------

@dataclass
class Case:
    """A law together with its default mesh, initial data and boundary data.

    ``exterior(x, t)`` gives the exterior trace imposed on every boundary
    face (it does not depend on the interior state); ``exact`` is the
    closed-form solution when one exists.
    """

    name: str
    law: Law
    mesh: MeshSpec
    initial: Callable
    exterior: Callable | None = None
    exact: Callable | None = None
    params: dict = field(default_factory=dict)


def _gaussian_bump(x):
    r2 = (x[..., 0] - 0.5) ** 2 + (x[..., 1] - 0.5) ** 2
    return np.exp(-r2 / (2.0 * 0.1 ** 2))[..., None]


def advection_case(field_id: str = "a", mesh: MeshSpec | None = None) -> Case:
    mesh = mesh or MeshSpec("cartesian", (8, 8), ((0.0, 1.0), (0.0, 1.0)))
    law = advection_law(field_id, mesh.dimension)
    return Case(f"advection-{field_id}", law, mesh, _gaussian_bump,
                exterior=lambda x, t: np.zeros(x.shape[:-1] + (1,)),
                params={"field": field_id})


@dataclass(frozen=True)
class VortexParameters:
    gamma: float = GAMMA
    mach: float = 0.5
    u_inf: float = 1.0
    theta: float = float(np.arctan(0.5))
    eps: float = 0.3
    rc: float = 1.5
    x0: float = 5.0
    y0: float = 5.0
    rho_inf: float = 1.0

    @property
    def p_inf(self) -> float:
        return self.rho_inf * self.u_inf ** 2 / (self.gamma * self.mach ** 2)


def vortex_solution(x, t, prm: VortexParameters = VortexParameters()):
    """Isentropic vortex advected by the free stream, as conserved variables."""
    g = prm.gamma
    ub = prm.u_inf * np.cos(prm.theta)
    vb = prm.u_inf * np.sin(prm.theta)
    xr = x[..., 0] - prm.x0 - ub * t
    yr = x[..., 1] - prm.y0 - vb * t
    f = (1.0 - xr ** 2 - yr ** 2) / prm.rc ** 2
    amp = prm.eps / (2.0 * np.pi * prm.rc) * np.exp(0.5 * f)
    u = prm.u_inf * (np.cos(prm.theta) - amp * yr)
    v = prm.u_inf * (np.sin(prm.theta) + amp * xr)
    base = 1.0 - prm.eps ** 2 * (g - 1.0) * prm.mach ** 2 / (8.0 * np.pi ** 2) * np.exp(f)
    rho = prm.rho_inf * base ** (1.0 / (g - 1.0))
    p = prm.p_inf * base ** (g / (g - 1.0))
    law = EulerLaw(2, g)
    return law.conserved(rho, np.stack([u, v], axis=-1), p)


def euler_vortex_case(mesh: MeshSpec | None = None, prm: VortexParameters = VortexParameters()) -> Case:
    mesh = mesh or MeshSpec("cartesian", (16, 10), ((0.0, 20.0), (0.0, 15.0)))
    law = EulerLaw(2, prm.gamma)
    sol = lambda x, t: vortex_solution(x, t, prm)
    return Case("euler-vortex", law, mesh, lambda x: sol(x, 0.0), exterior=sol, exact=sol,
                params={"vortex": prm})


PERIODIC_VELOCITY = (1.0, -0.5, 1.0)


def periodic_density_wave(x, t, gamma: float = GAMMA):
    """Density sine wave carried by a uniform flow at unit pressure."""
    vel = np.array(PERIODIC_VELOCITY)
    s = x[..., 0] + x[..., 1] + x[..., 2] - t * vel.sum()
    rho = 1.0 + 0.2 * np.sin(np.pi * s)
    law = EulerLaw(3, gamma)
    return law.conserved(rho, np.broadcast_to(vel, x.shape), np.ones_like(rho))


def periodic_euler3d_case(n: int = 6, mesh: MeshSpec | None = None) -> Case:
    mesh = mesh or MeshSpec("cartesian", (n, n, n), ((0.0, 2.0),) * 3, periodic=(True, True, True))
    law = EulerLaw(3)
    return Case("euler-periodic-3d", law, mesh, lambda x: periodic_density_wave(x, 0.0),
                exterior=None, exact=periodic_density_wave)


CASES = {
    "advection": advection_case,
    "euler_vortex": euler_vortex_case,
    "euler_periodic_3d": periodic_euler3d_case,
}


def exact_solution(case: Case, x, t):
    if case.exact is None:
        raise ValueError(f"case {case.name} has no closed-form solution")
    return case.exact(np.asarray(x, dtype=float), float(t))
