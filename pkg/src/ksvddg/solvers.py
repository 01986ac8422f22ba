"""Linear, nonlinear and time-stepping solvers.

Implicit steps are solved by full-step Newton with restarted, right-
preconditioned GMRES for each linear system (left preconditioning is
available through :class:`GmresConfig`).  The element-block preconditioner
is rebuilt at every Newton iterate from a fresh linearization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import bisect

from .errors import GmresConvergenceError, NewtonDivergenceError, PcgConvergenceError
from .preconditioners import Preconditioner, make_preconditioner

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GmresConfig:
    """Restarted GMRES settings.

    With ``side="left"`` the stopping test is on the preconditioned
    residual, ``||P^{-1}(b - A x)|| <= rtol ||P^{-1} b||``; with
    ``side="right"`` it is on the true residual, ``||b - A x|| <= rtol ||b||``.
    """

    rtol: float = 1e-5
    restart: int = 60
    max_iterations: int = 2000
    side: str = "right"

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("GMRES tolerance must be positive")
        if self.restart < 1:
            raise ValueError("GMRES restart length must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("GMRES max_iterations must be >= 1")
        if self.side not in ("left", "right"):
            raise ValueError(f"preconditioning side must be 'left' or 'right', got {self.side!r}")


def _identity(v):
    return v


def gmres(op: Callable, pc: Callable | None, b, cfg: GmresConfig | None = None,
          history: list | None = None) -> tuple[np.ndarray, int]:
    """Solve ``op(x) = b`` from ``x0 = 0`` with preconditioner ``pc``.

    Returns the solution and the number of Arnoldi steps taken (summed
    over restarts).  If ``history`` is a list, the residual estimate used
    by the stopping test is appended to it after every step, starting with
    the initial residual.
    """
    cfg = cfg or GmresConfig()
    pc = pc or _identity
    b = np.asarray(b, dtype=float)
    if cfg.side == "right":
        y, its = _gmres_core(lambda v: op(pc(v)), _identity, b, cfg, history)
        return pc(y), its
    return _gmres_core(op, pc, b, cfg, history)


def _gmres_core(op, pc, b, cfg, history):
    x = np.zeros_like(b)
    hist = history if history is not None else []
    r = pc(b)
    beta = float(np.linalg.norm(r))
    hist.append(beta)
    if beta == 0.0:
        return x, 0
    target = cfg.rtol * beta
    total = 0
    m = cfg.restart
    while True:
        V = np.zeros((m + 1, b.size))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        res = beta
        while k < m and total < cfg.max_iterations:
            w = np.array(pc(op(V[k])), dtype=float)  # op may return its argument
            for j in range(k + 1):
                H[j, k] = np.dot(w, V[j])
                w -= H[j, k] * V[j]
            hn = float(np.linalg.norm(w))
            H[k + 1, k] = hn
            for j in range(k):
                t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
                H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
                H[j, k] = t
            den = math.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = (1.0, 0.0) if den == 0.0 else (H[k, k] / den, H[k + 1, k] / den)
            H[k, k] = den
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] *= cs[k]
            k += 1
            total += 1
            res = abs(g[k])
            hist.append(res)
            if res <= target or hn == 0.0:
                break
            V[k] = w / hn
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        x += V[:k].T @ y
        if res <= target:
            return x, total
        r = pc(b - op(x))
        beta = float(np.linalg.norm(r))
        if beta <= target:
            return x, total
        if total >= cfg.max_iterations:
            raise GmresConvergenceError(
                f"GMRES reached {total} iterations with relative residual {beta / hist[0]:.3e}",
                x=x, history=list(hist))


# ---------------------------------------------------------------------------
# PCG
# ---------------------------------------------------------------------------

def pcg(op: Callable, pc: Callable | None, b, rtol: float = 1e-12, max_iterations: int = 500):
    """Preconditioned conjugate gradients from ``x0 = 0``; returns ``(x, iterations)``."""
    pc = pc or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    r = b.copy()
    bn = float(np.linalg.norm(b))
    if bn == 0.0:
        return x, 0
    z = pc(r)
    p = z.copy()
    rz = float(np.dot(r, z))
    hist = [bn]
    for it in range(1, max_iterations + 1):
        Ap = op(p)
        alpha = rz / float(np.dot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rn = float(np.linalg.norm(r))
        hist.append(rn)
        if rn <= rtol * bn:
            return x, it
        z = pc(r)
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise PcgConvergenceError(f"PCG did not converge in {max_iterations} iterations", x=x, history=hist)


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NewtonConfig:
    rtol: float = 1e-8
    atol: float = 1e-14
    max_iterations: int = 20
    # iterations of residual growth tolerated before giving up
    patience: int = 3

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("Newton max_iterations must be >= 1")


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    gmres_iterations: list
    residual_norms: list
    form_seconds: float = 0.0
    apply_seconds: float = 0.0
    fallbacks: int = 0
    # GMRES residual estimates, one list per linear solve
    gmres_histories: list = field(default_factory=list)


def newton(residual: Callable, linearize: Callable, pc_factory: Callable, u0,
           cfg: NewtonConfig | None = None, gmres_cfg: GmresConfig | None = None,
           linear: bool = False) -> NewtonResult:
    """Full-step Newton for ``residual(u) = 0``.

    ``linearize(u)`` returns the Jacobian action and ``pc_factory(lin)``
    a preconditioner for it.  With ``linear=True`` the map is affine and a
    single step is taken (its accuracy is that of the linear solve).
    """
    cfg = cfg or NewtonConfig()
    u = np.array(u0, dtype=float)
    R = residual(u)
    norms = [float(np.linalg.norm(R))]
    counts: list = []
    out = NewtonResult(u, 0, counts, norms)
    stop = max(cfg.rtol * norms[0], cfg.atol)
    best = norms[0]
    growth = 0
    while norms[-1] > stop:
        if out.iterations >= cfg.max_iterations:
            raise NewtonDivergenceError(
                f"Newton did not converge in {cfg.max_iterations} iterations "
                f"(residual {norms[-1]:.3e}, target {stop:.3e})", x=u, history=norms)
        lin = linearize(u)
        pc = pc_factory(lin)
        hist: list = []
        du, its = gmres(lin, pc, -R, gmres_cfg, history=hist)
        out.gmres_histories.append(hist)
        if isinstance(pc, Preconditioner):
            out.form_seconds += pc.form_seconds
            out.apply_seconds += pc.apply_seconds
            out.fallbacks += len(pc.fallback_log)
        counts.append(its)
        u = u + du
        out.iterations += 1
        R = residual(u)
        norms.append(float(np.linalg.norm(R)))
        if not np.isfinite(norms[-1]):
            raise NewtonDivergenceError("Newton produced a non-finite residual", x=u, history=norms)
        if linear:
            break
        if norms[-1] < best:
            best = norms[-1]
            growth = 0
        else:
            growth += 1
            if growth >= cfg.patience:
                raise NewtonDivergenceError(
                    f"Newton residual grew for {growth} consecutive iterations", x=u, history=norms)
    out.u = u
    return out


# ---------------------------------------------------------------------------
# time integrators
# ---------------------------------------------------------------------------

def dirk3_gamma() -> float:
    """Root of ``6 g^3 - 18 g^2 + 9 g - 1`` in (1/6, 1/2), about 0.4358665215."""
    return bisect(lambda g: 6 * g ** 3 - 18 * g ** 2 + 9 * g - 1, 1.0 / 6.0, 0.5, xtol=1e-15)


def dirk3_tableau():
    """Alexander's three-stage, third-order, stiffly accurate DIRK: ``(A, c)``."""
    g = dirk3_gamma()
    b1 = -(6 * g * g - 16 * g + 1) / 4
    b2 = (6 * g * g - 20 * g + 5) / 4
    A = np.array([[g, 0.0, 0.0], [(1 - g) / 2, g, 0.0], [b1, b2, g]])
    return A, A.sum(axis=1)


@dataclass
class StepResult:
    u: np.ndarray
    newton_iterations: int = 0
    gmres_iterations: list = field(default_factory=list)
    form_seconds: float = 0.0
    apply_seconds: float = 0.0
    fallbacks: int = 0
    gmres_histories: list = field(default_factory=list)
    newton_residuals: list = field(default_factory=list)

    @property
    def linear_solves(self) -> int:
        return len(self.gmres_iterations)

    @property
    def average_gmres(self) -> float:
        """Mean GMRES iterations over every linear solve in the step."""
        g = self.gmres_iterations
        return float(np.mean(g)) if g else 0.0

    def absorb(self, res: NewtonResult):
        self.newton_iterations += res.iterations
        self.gmres_iterations.extend(res.gmres_iterations)
        self.form_seconds += res.form_seconds
        self.apply_seconds += res.apply_seconds
        self.fallbacks += res.fallbacks
        self.gmres_histories.extend(res.gmres_histories)
        self.newton_residuals.append(list(res.residual_norms))


def _pc_factory(precond):
    if callable(precond) and not isinstance(precond, str):
        return precond
    return lambda lin: make_preconditioner(precond, lin)


def _implicit_solve(disc, rhs, t, a_dt, guess, precond, newton_cfg, gmres_cfg):
    """Solve ``M U - a_dt r(U, t) = rhs`` for ``U``."""
    def residual(U):
        return disc.mass_apply(U) - a_dt * disc.residual(U, t) - rhs
    return newton(residual, lambda U: disc.linearize(U, t, a_dt), _pc_factory(precond), guess,
                  newton_cfg, gmres_cfg, linear=getattr(disc.law, "linear", False))


def step_backward_euler(disc, u, t: float, dt: float, precond="jacobi_full",
                        newton_cfg: NewtonConfig | None = None,
                        gmres_cfg: GmresConfig | None = None) -> StepResult:
    """One step of ``M (u' - u) = dt r(u', t + dt)``."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    res = _implicit_solve(disc, disc.mass_apply(u), t + dt, dt, u, precond, newton_cfg, gmres_cfg)
    out = StepResult(res.u)
    out.absorb(res)
    return out


def step_dirk3(disc, u, t: float, dt: float, precond="jacobi_full",
               newton_cfg: NewtonConfig | None = None,
               gmres_cfg: GmresConfig | None = None) -> StepResult:
    """One step of the three-stage L-stable DIRK scheme."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    A, c = dirk3_tableau()
    Mu = disc.mass_apply(u)
    out = StepResult(u)
    stages = []
    U = np.asarray(u, dtype=float)
    for i in range(3):
        rhs = Mu.copy()
        for j in range(i):
            rhs += dt * A[i, j] * stages[j]
        res = _implicit_solve(disc, rhs, t + c[i] * dt, A[i, i] * dt, U, precond, newton_cfg, gmres_cfg)
        out.absorb(res)
        U = res.u
        stages.append(disc.residual(U, t + c[i] * dt))
    out.u = U
    return out


def step_rk4(disc, u, t: float, dt: float, **_) -> StepResult:
    """Classical explicit RK4 on ``du/dt = M^{-1} r(u)``."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    u = np.asarray(u, dtype=float)

    def f(v, s):
        return disc.mass_solve(disc.residual(v, s))

    k1 = f(u, t)
    k2 = f(u + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(u + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(u + dt * k3, t + dt)
    return StepResult(u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


SCHEMES = {"backward_euler": step_backward_euler, "dirk3": step_dirk3, "rk4": step_rk4}


@dataclass(frozen=True)
class TimeIntegrator:
    """Fixed-step integration with one of :data:`SCHEMES`."""

    scheme: str
    dt: float
    steps: int | None = None
    final_time: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if (self.steps is None) == (self.final_time is None):
            raise ValueError("give exactly one of steps or final_time")

    @property
    def nsteps(self) -> int:
        if self.steps is not None:
            return int(self.steps)
        n = self.final_time / self.dt
        if abs(n - round(n)) > 1e-9 * max(n, 1.0):
            raise ValueError("final_time is not a whole number of steps")
        return int(round(n))

    def run(self, disc, u0, t0: float = 0.0, **kw) -> tuple[np.ndarray, list]:
        step = SCHEMES[self.scheme]
        u = np.asarray(u0, dtype=float)
        t = t0
        records = []
        for _ in range(self.nsteps):
            res = step(disc, u, t, self.dt, **kw)
            u = res.u
            t += self.dt
            records.append(res)
        return u, records
