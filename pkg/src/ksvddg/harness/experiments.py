"""Experiment drivers behind the CLI verbs.

``run_experiment`` sweeps the (case variant, p, dt, preconditioner) grid
and records iteration counts and timings of a few implicit steps;
``run_scaling_scan`` times preconditioner formation and application over a
degree sweep; ``run_convergence_study`` measures errors against closed-form
solutions (or a fine-step reference) and the observed rates.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..conservation_laws import (VortexParameters, advection_case, euler_vortex_case,
                                 periodic_euler3d_case)
from ..dg_core import build_reference, generate_mesh
from ..errors import (BlockBudgetError, ConfigError, GmresConvergenceError, KsvdFactorError,
                      MeshError, NewtonDivergenceError, NonPhysicalStateError,
                      SchurConvergenceError, SingularMatrixError, SylvesterSingularError)
from ..operators import Discretization
from ..preconditioners import make_preconditioner
from ..solvers import GmresConfig, NewtonConfig, TimeIntegrator
from .config import ExperimentConfig, parse_config

log = logging.getLogger(__name__)

# exception type -> machine-readable code; first match wins, so subclasses come first
FAILURE_CODES = (
    (GmresConvergenceError, "GMRES_MAXIT"),
    (NewtonDivergenceError, "NEWTON_DIVERGED"),
    (NonPhysicalStateError, "NONPHYSICAL_STATE"),
    (KsvdFactorError, "KSVD_FACTOR_SINGULAR"),
    (SylvesterSingularError, "SYLVESTER_SINGULAR"),
    (SingularMatrixError, "SINGULAR_BLOCK"),
    (SchurConvergenceError, "SCHUR_NO_CONVERGENCE"),
    (BlockBudgetError, "BLOCK_BUDGET"),
    (MeshError, "MESH_INVALID"),
)


def failure_code(exc: BaseException) -> str:
    for cls, code in FAILURE_CODES:
        if isinstance(exc, cls):
            return code
    return "INTERNAL_ERROR"


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def variants(cfg: ExperimentConfig) -> list:
    """Case variants swept by one config (advection velocity fields, else a single ``None``)."""
    if cfg.case == "advection":
        return list(cfg.law.get("fields", ["a"]))
    return [None]


def make_case(cfg: ExperimentConfig, variant=None, counts=None):
    """The :class:`Case` a config describes, with mesh overrides applied."""
    over = {k: (tuple(map(tuple, v)) if k == "extents" else tuple(v) if isinstance(v, list) else v)
            for k, v in cfg.mesh.items()}
    if counts is not None:
        over["counts"] = tuple(counts)
    if cfg.case == "advection":
        base = advection_case(variant or "a").mesh
        if len(over.get("counts", base.counts)) == 3 and "extents" not in over:
            over["extents"] = ((0.0, 1.0),) * 3
        return advection_case(variant or "a", dataclasses.replace(base, **over))
    if cfg.case == "euler_vortex":
        prm = VortexParameters(**{k: cfg.law[k] for k in ("gamma", "mach", "eps", "rc") if k in cfg.law})
        base = euler_vortex_case(prm=prm).mesh
        return euler_vortex_case(dataclasses.replace(base, **over), prm)
    base = periodic_euler3d_case().mesh
    return periodic_euler3d_case(mesh=dataclasses.replace(base, **over))


def build_discretization(cfg: ExperimentConfig, case, p: int) -> Discretization:
    q = cfg.quadrature
    ref = build_reference(p, q.get("rule", "gauss"), p + 1 + int(q.get("extra_points", 1)))
    mesh = generate_mesh(case.mesh, ref)
    return Discretization(mesh, case.law, case.exterior)


def preconditioner_factory(cfg: ExperimentConfig, kind: str):
    kw = {}
    if kind.startswith("ksvd"):
        kw = {"seed": cfg.seed, **cfg.ksvd}
    return lambda lin: make_preconditioner(kind, lin, **kw)


def solver_configs(cfg: ExperimentConfig):
    return GmresConfig(**cfg.gmres), NewtonConfig(**cfg.newton)


# ---------------------------------------------------------------------------
# iteration-count experiments
# ---------------------------------------------------------------------------

@dataclass
class ReportRow:
    """One cell of an iteration-count table.

    ``avg_gmres`` averages over every linear solve of every step;
    ``gmres_iterations`` lists them.  ``l2_error`` is the density error
    against the exact solution at the final time, when one exists.
    """

    case: str
    p: int
    dt: float
    preconditioner: str
    scheme: str
    steps: int
    avg_gmres: float | None = None
    gmres_iterations: list = field(default_factory=list)
    linear_solves: int = 0
    newton_iterations: int = 0
    fallbacks: int = 0
    form_seconds: float = 0.0
    apply_seconds: float = 0.0
    total_seconds: float = 0.0
    l2_error: float | None = None
    status: str = "ok"
    failure_code: str = ""
    message: str = ""


CSV_COLUMNS = tuple(f.name for f in dataclasses.fields(ReportRow))


def _run_cell(cfg: ExperimentConfig, variant, p, dt, kind, disc=None, u0=None):
    """Integrate one cell; returns ``(row, step_records)``."""
    case = make_case(cfg, variant)
    scheme = cfg.integrator["scheme"]
    steps = int(cfg.integrator["steps"])
    row = ReportRow(case.name, int(p), float(dt), kind, scheme, steps)
    records = []
    t0 = time.perf_counter()
    try:
        if disc is None:
            disc = build_discretization(cfg, case, p)
            u0 = disc.interpolate(case.initial)
        gcfg, ncfg = solver_configs(cfg)
        kw = {} if scheme == "rk4" else {"precond": preconditioner_factory(cfg, kind),
                                          "gmres_cfg": gcfg, "newton_cfg": ncfg}
        u, records = TimeIntegrator(scheme, dt, steps=steps).run(disc, u0, 0.0, **kw)
        its = [i for r in records for i in r.gmres_iterations]
        row.gmres_iterations = its
        row.linear_solves = len(its)
        row.avg_gmres = float(np.mean(its)) if its else 0.0
        row.newton_iterations = sum(r.newton_iterations for r in records)
        row.fallbacks = sum(r.fallbacks for r in records)
        row.form_seconds = sum(r.form_seconds for r in records)
        row.apply_seconds = sum(r.apply_seconds for r in records)
        if case.exact is not None:
            row.l2_error = disc.l2_error(u, case.exact, steps * dt, component=0)
    except Exception as exc:  # recorded per row, summarized by the caller
        row.status = "failed"
        row.failure_code = failure_code(exc)
        row.message = f"{type(exc).__name__}: {exc}"
        log.error("%s p=%d dt=%g %s failed: %s", case.name, p, dt, kind, row.message)
    row.total_seconds = time.perf_counter() - t0
    return row, records


def _cell_worker(args):
    doc, source, variant, p, dt, kind = args
    row, records = _run_cell(parse_config(doc, source), variant, p, dt, kind)
    hist = [(r.gmres_histories, r.newton_residuals) for r in records]
    return row, hist


@dataclass
class RunReport:
    config: ExperimentConfig
    rows: list
    histories: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.status != "ok"]

    def summary(self) -> dict:
        return {
            "cells": len(self.rows),
            "failed": len(self.failures),
            "failures": [{"case": r.case, "p": r.p, "dt": r.dt, "preconditioner": r.preconditioner,
                          "code": r.failure_code, "message": r.message} for r in self.failures],
        }


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run every (variant, p, dt, preconditioner) cell of ``cfg``.

    Cells run sequentially (timings stay clean) unless ``cfg.workers > 1``,
    in which case they are spread over worker processes.
    """
    grid = [(v, p, dt, kind) for v in variants(cfg) for p in cfg.p for dt in cfg.dt
            for kind in cfg.preconditioners]
    rows, hists = [], {}
    if cfg.workers > 1:
        doc = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for row, hist in pool.map(_cell_worker, [(doc, cfg.source) + g for g in grid]):
                rows.append(row)
                hists[_history_key(row)] = hist
        return RunReport(cfg, rows, hists)
    cache = {}
    for v, p, dt, kind in grid:
        if (v, p) not in cache:
            cache.clear()
            case = make_case(cfg, v)
            try:
                disc = build_discretization(cfg, case, p)
                cache[(v, p)] = (disc, disc.interpolate(case.initial))
            except Exception as exc:
                log.error("cannot build %s at p=%d: %s", case.name, p, exc)
                cache[(v, p)] = (None, None)
        disc, u0 = cache[(v, p)]
        log.info("cell %s p=%d dt=%g %s", v or cfg.case, p, dt, kind)
        row, records = _run_cell(cfg, v, p, dt, kind, disc, u0)
        rows.append(row)
        hists[_history_key(row)] = [(r.gmres_histories, r.newton_residuals) for r in records]
        log.info("  avg GMRES %s, Newton %d, %.2fs", row.avg_gmres, row.newton_iterations, row.total_seconds)
    return RunReport(cfg, rows, hists)


def _history_key(row: ReportRow) -> str:
    return f"{row.case}_p{row.p}_dt{row.dt:g}_{row.preconditioner}"


# ---------------------------------------------------------------------------
# timing scans
# ---------------------------------------------------------------------------

@dataclass
class ScanRow:
    case: str
    d: int
    p: int
    preconditioner: str
    form_seconds: float
    apply_seconds: float
    form_min: float
    apply_min: float
    repeats: int


SCAN_COLUMNS = tuple(f.name for f in dataclasses.fields(ScanRow))


def top_half(n: int) -> int:
    """Number of trailing sweep points used for slope fits (at least 3)."""
    return min(n, max(3, math.ceil(n / 2)))


def fit_slope(ps, times) -> float:
    """Least-squares slope of ``log t`` against ``log p`` over the top half of the sweep."""
    ps = np.asarray(ps, dtype=float)
    times = np.asarray(times, dtype=float)
    k = top_half(ps.size)
    return float(np.polyfit(np.log(ps[-k:]), np.log(times[-k:]), 1)[0])


def _median_time(fn, repeats: int, warmup: int):
    for _ in range(warmup):
        fn()
    ts = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return float(np.median(ts)), float(np.min(ts))


@dataclass
class ScanReport:
    config: ExperimentConfig
    rows: list
    slopes: dict

    def summary(self) -> dict:
        return {"slopes": self.slopes, "fit_points": top_half(len(self.config.p))}


def run_scaling_scan(cfg: ExperimentConfig) -> ScanReport:
    """Median form/apply times per degree and fitted log-log slopes.

    Each cell is timed ``scan.repeats`` times after ``scan.warmup``
    discarded runs, with a monotonic clock.  The operator is linearized at
    the case's initial state with the first configured time step.
    """
    ps = sorted(cfg.p)
    if len(ps) < 3:
        raise ConfigError(f"{cfg.source}: p: a scaling scan needs at least 3 degrees, got {len(ps)}")
    repeats, warmup = int(cfg.scan["repeats"]), int(cfg.scan["warmup"])
    dt = cfg.dt[0]
    rng = np.random.default_rng(cfg.seed)
    rows = []
    case = make_case(cfg, variants(cfg)[0])
    for p in ps:
        disc = build_discretization(cfg, case, p)
        lin = disc.linearize(disc.interpolate(case.initial), 0.0, dt)
        v = rng.standard_normal(disc.size)
        for kind in cfg.preconditioners:
            factory = preconditioner_factory(cfg, kind)
            form_med, form_min = _median_time(lambda: factory(lin), repeats, warmup)
            pc = factory(lin)
            app_med, app_min = _median_time(lambda: pc.apply(v), repeats, warmup)
            rows.append(ScanRow(case.name, disc.d, p, kind, form_med, app_med, form_min, app_min, repeats))
            log.info("p=%d %s form %.3es apply %.3es", p, kind, form_med, app_med)
    slopes = {}
    for kind in cfg.preconditioners:
        sel = [r for r in rows if r.preconditioner == kind]
        slopes[kind] = {"form": fit_slope([r.p for r in sel], [r.form_seconds for r in sel]),
                        "apply": fit_slope([r.p for r in sel], [r.apply_seconds for r in sel])}
    return ScanReport(cfg, rows, slopes)


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    case: str
    sweep: str
    p: int
    mesh: str
    dt: float
    final_time: float
    l2_error: float | None
    rate: float | None = None
    status: str = "ok"
    failure_code: str = ""
    message: str = ""


CONVERGENCE_COLUMNS = tuple(f.name for f in dataclasses.fields(ConvergenceRow))


@dataclass
class ConvergenceReport:
    config: ExperimentConfig
    rows: list

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.status != "ok"]

    def summary(self) -> dict:
        return {"cells": len(self.rows), "failed": len(self.failures),
                "failures": [{"p": r.p, "mesh": r.mesh, "dt": r.dt, "code": r.failure_code,
                              "message": r.message} for r in self.failures]}


def _integrate(cfg, disc, u0, scheme, dt, final_time):
    if final_time == 0.0:
        return np.array(u0, dtype=float)
    kw = {}
    if scheme != "rk4":
        gcfg, ncfg = solver_configs(cfg)
        kw = {"precond": preconditioner_factory(cfg, cfg.preconditioners[0]),
              "gmres_cfg": gcfg, "newton_cfg": ncfg}
    u, _ = TimeIntegrator(scheme, dt, final_time=final_time).run(disc, u0, 0.0, **kw)
    return u


def run_convergence_study(cfg: ExperimentConfig) -> ConvergenceReport:
    """Density L2 errors over a sweep in ``p``, mesh or ``dt``.

    ``rate`` is the error reduction factor between consecutive degrees for
    a ``p`` sweep, and the observed order ``log(e0/e1)/log(h0/h1)`` for mesh
    and ``dt`` sweeps.
    """
    c = cfg.converge
    sweep, scheme, T = c["sweep"], c["scheme"], float(c["final_time"])
    case0 = make_case(cfg, variants(cfg)[0])
    if c["reference"] == "exact" and case0.exact is None:
        raise ConfigError(f"{cfg.source}: case: {case0.name} has no closed-form solution; "
                          "use converge.reference 'fine' with a dt sweep")
    if sweep == "p":
        cells = [(p, None, c["dt"]) for p in cfg.p]
    elif sweep == "mesh":
        cells = [(cfg.p[0], m, c["dt"]) for m in c.get("meshes", [])]
    else:
        cells = [(cfg.p[0], None, dt) for dt in c.get("dts", [])]
    if len(cells) < 1:
        raise ConfigError(f"{cfg.source}: converge: the {sweep} sweep is empty")
    rows = []
    ref_cache = {}
    for p, counts, dt in cells:
        case = make_case(cfg, variants(cfg)[0], counts)
        label = "x".join(str(n) for n in case.mesh.counts)
        row = ConvergenceRow(case.name, sweep, int(p), label, float(dt), T, None)
        try:
            disc = build_discretization(cfg, case, p)
            u0 = disc.interpolate(case.initial)
            u = _integrate(cfg, disc, u0, scheme, dt, T)
            if c["reference"] == "exact":
                row.l2_error = disc.l2_error(u, case.exact, T, component=0)
            else:
                key = (p, label)
                if key not in ref_cache:
                    ref_cache[key] = _integrate(cfg, disc, u0, "rk4", c["reference_dt"], T)
                row.l2_error = disc.l2_norm(u - ref_cache[key], component=0)
        except Exception as exc:
            row.status, row.failure_code = "failed", failure_code(exc)
            row.message = f"{type(exc).__name__}: {exc}"
            log.error("convergence cell p=%d mesh=%s dt=%g failed: %s", p, label, dt, row.message)
        rows.append(row)
    _fill_rates(rows, sweep)
    return ConvergenceReport(cfg, rows)


def _fill_rates(rows, sweep):
    for prev, cur in zip(rows, rows[1:]):
        if prev.l2_error is None or cur.l2_error is None or cur.l2_error == 0.0 or prev.l2_error == 0.0:
            continue
        ratio = prev.l2_error / cur.l2_error
        if sweep == "p":
            cur.rate = ratio
        elif sweep == "mesh":
            h0 = 1.0 / int(prev.mesh.split("x")[0])
            h1 = 1.0 / int(cur.mesh.split("x")[0])
            cur.rate = math.log(ratio) / math.log(h0 / h1)
        else:
            cur.rate = math.log(ratio) / math.log(prev.dt / cur.dt)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return str(v)


def write_csv(rows, path, columns) -> Path:
    """CSV with a header row and a fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            d = dataclasses.asdict(r)
            w.writerow([_fmt(d[c]) for c in columns])
    return path


def write_json(doc: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def write_histories(histories: dict, directory) -> list:
    """One CSV per cell: ``step, solve, iteration, residual`` for every GMRES solve."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for key, steps in histories.items():
        path = directory / f"{key}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("step", "solve", "iteration", "residual"))
            for s, (gmres_hists, _) in enumerate(steps):
                for j, hist in enumerate(gmres_hists):
                    for k, res in enumerate(hist):
                        w.writerow((s, j, k, repr(float(res))))
        out.append(path)
    return out


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def baseline_path(config_path) -> Path:
    p = Path(config_path)
    return p.with_name(p.stem + ".baseline.json")


def compare_baseline(rows, baseline: dict) -> list:
    """Compare report rows with stored regression values.

    ``baseline["rows"]`` entries name a cell (``case``, ``p``, ``dt``,
    ``preconditioner``) and an expected ``avg_gmres``; ``tolerance`` is the
    allowed absolute deviation (per entry or global).
    """
    tol_default = float(baseline.get("tolerance", 0.0))
    index = {(r.case, r.p, round(r.dt, 12), r.preconditioner): r for r in rows}
    out = []
    for entry in baseline.get("rows", []):
        key = (entry["case"], int(entry["p"]), round(float(entry["dt"]), 12), entry["preconditioner"])
        row = index.get(key)
        tol = float(entry.get("tolerance", tol_default))
        actual = None if row is None else row.avg_gmres
        ok = actual is not None and abs(actual - entry["avg_gmres"]) <= tol
        out.append({"case": key[0], "p": key[1], "dt": key[2], "preconditioner": key[3],
                    "expected": entry["avg_gmres"], "actual": actual, "tolerance": tol,
                    "origin": entry.get("origin", baseline.get("origin", "")), "ok": bool(ok)})
    return out
