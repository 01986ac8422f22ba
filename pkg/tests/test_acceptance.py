"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL criterion N: ...`` line, which is
also collected into the terminal summary.  Reference iteration counts for
criteria 5 and 6 are the published table values.
"""

import time
from pathlib import Path

import numpy as np

from conftest import (ACCEPTANCE_LINES, advection_disc, dense_operator, diagonal_block, make_disc,
                      noisy_state, periodic_disc, vortex_disc)
from ksvddg.conservation_laws import euler_vortex_case
from ksvddg.dg_core import MeshSpec
from ksvddg.harness.config import load_config, parse_config
from ksvddg.harness.experiments import run_convergence_study, run_experiment, run_scaling_scan
from ksvddg.operators import block_terms, jacobian_apply
from ksvddg.preconditioners import apply_ksvd_2d, apply_ksvd_3d, form_ksvd_2d, form_ksvd_3d
from ksvddg.tensor_linalg import ShuffledOperator, shuffle_dense
from ksvddg.tensor_linalg.lanczos import LanczosConfig, lanczos_ksvd

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
UNIT2 = ((0.0, 1.0), (0.0, 1.0))
UNIT3 = ((0.0, 1.0),) * 3
VORTEX = ((2.0, 8.0), (2.0, 8.0))
CUBE2 = ((0.0, 2.0),) * 3


def verdict(n, ok, detail, seconds):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} ({seconds:.0f}s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def by_key(rows):
    return {(r.case, r.p, r.dt, r.preconditioner): r for r in rows}


# ---------------------------------------------------------------------------

def test_criterion_1_ksvd_matches_jacobi_on_separable_blocks():
    t0 = time.perf_counter()
    ps = list(range(1, 9))
    runs = [load_config(CONFIGS / "advection_cartesian.json").replace(p=ps, law={"fields": ["a", "b"]}),
            load_config(CONFIGS / "advection_perturbed.json").replace(p=ps, law={"fields": ["a"]})]
    mismatches, cells = [], 0
    for cfg in runs:
        rows = by_key(run_experiment(cfg).rows)
        for (case, p, dt, kind), row in rows.items():
            if kind != "ksvd_full":
                continue
            ref = rows[(case, p, dt, "jacobi_full")]
            cells += 1
            if row.status != "ok" or ref.status != "ok" or row.gmres_iterations != ref.gmres_iterations:
                mismatches.append(f"{cfg.mesh['kind']} {case} p={p}: K={row.gmres_iterations} "
                                  f"J={ref.gmres_iterations}")
    dt = time.perf_counter() - t0
    detail = f"{cells} cells, {len(mismatches)} mismatches" + (f" {mismatches}" if mismatches else "")
    verdict(1, not mismatches and dt < 300, detail, dt)


def _random_block(rng):
    p = int(rng.integers(1, 5))
    seed = int(rng.integers(0, 1000))
    dt = float(rng.uniform(0.05, 0.5))
    kind = rng.choice(["advection_b", "advection_c", "euler"])
    if kind == "euler":
        disc, case = vortex_disc(p=p, counts=(2, 2), kind="perturbed", amplitude=0.15, seed=seed)
        u = noisy_state(disc, case, rng)
    else:
        disc, _ = advection_disc(kind[-1], p=p, counts=(2, 2), kind="perturbed", amplitude=0.15, seed=seed)
        u = np.zeros(disc.size)
    lin = disc.linearize(u, dt=dt)
    return block_terms(lin), int(rng.integers(0, disc.mesh.nel)), f"{kind} p={p}"


def test_criterion_2_lanczos_ksvd_is_optimal():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, bad = 0.0, []
    for trial in range(50):
        terms, e, label = _random_block(rng)
        m1, n1, m2, n2 = terms.blocking
        op = ShuffledOperator(m1, n1, m2, n2,
                              lambda v: terms.shuffled_apply(v[None], [e])[0],
                              lambda w: terms.shuffled_apply_T(w[None], [e])[0])
        res = lanczos_ksvd(op, LanczosConfig(requested_terms=2, seed=trial))
        A = terms.assemble([e])[0]
        s = np.linalg.svd(shuffle_dense(A, m1, n1, m2, n2), compute_uv=False)
        opt = np.sqrt(np.sum(s[2:] ** 2))
        err = np.linalg.norm(A - res.terms.to_dense())
        # blocks that are exactly two-term compare against roundoff
        gap = abs(err - opt) / max(opt, 1e-12 * s[0])
        worst = max(worst, gap)
        if gap > 1e-6:
            bad.append(f"{label}: err={err:.3e} opt={opt:.3e}")
    dt = time.perf_counter() - t0
    verdict(2, not bad and dt < 120, f"50 blocks, worst relative gap {worst:.1e}" + (f" {bad}" if bad else ""), dt)


def _equivalence_cases():
    cases = []
    for p in range(1, 5):
        disc, _ = advection_disc("c", p=p, counts=(2, 2), kind="perturbed", amplitude=0.1, seed=p)
        cases.append((f"adv2d p={p}", disc, None, UNIT2, (False, False)))
        disc, case = vortex_disc(p=p, counts=(2, 2), kind="perturbed", amplitude=0.1, seed=p)
        cases.append((f"euler2d p={p}", disc, case, VORTEX, (False, False)))
    for p in range(1, 4):
        disc, _ = advection_disc("a", p=p, counts=(2, 2, 2), kind="perturbed", amplitude=0.05, seed=p)
        cases.append((f"adv3d p={p}", disc, None, UNIT3, (False,) * 3))
        disc, case = periodic_disc(p=p, n=2, kind="perturbed", amplitude=0.05, seed=p)
        cases.append((f"euler3d p={p}", disc, case, CUBE2, (True,) * 3))
    return cases


def test_criterion_3_matrix_free_products_match_dense():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {"jacobian": 0.0, "shuffled": 0.0, "shuffled_T": 0.0}
    for label, disc, case, ext, per in _equivalence_cases():
        u = rng.standard_normal(disc.size) if case is None else noisy_state(disc, case, rng)
        lin = disc.linearize(u, dt=0.1)
        A, _ = dense_operator(lin, ext, per)
        for _ in range(20):
            v = rng.standard_normal(disc.size)
            worst["jacobian"] = max(worst["jacobian"], rel(jacobian_apply(lin, v, state=u), A @ v))
        terms = block_terms(lin)
        m1, n1, m2, n2 = terms.blocking
        for e in range(disc.mesh.nel):
            At = shuffle_dense(diagonal_block(A, disc, e), m1, n1, m2, n2)
            V = rng.standard_normal((20, m2 * n2))
            W = rng.standard_normal((20, m1 * n1))
            idx = [e] * 20
            worst["shuffled"] = max(worst["shuffled"], rel(terms.shuffled_apply(V, idx), V @ At.T))
            worst["shuffled_T"] = max(worst["shuffled_T"], rel(terms.shuffled_apply_T(W, idx), W @ At))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-11 and dt < 300
    verdict(3, ok, "worst relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), dt)


def _solve_instances():
    out = []
    for p in (2, 3, 4):
        for mode in ("full", "small"):
            disc, case = vortex_disc(p=p, counts=(2, 2), kind="perturbed", amplitude=0.15, seed=p)
            out.append((disc, case, mode, 0.1, form_ksvd_2d, apply_ksvd_2d))
    for p in (2, 3, 4):
        disc, _ = advection_disc("c", p=p, counts=(2, 2), kind="perturbed", amplitude=0.2, seed=p)
        out.append((disc, None, "full", 0.5, form_ksvd_2d, apply_ksvd_2d))
    for p in (1, 2, 3):
        for mode in ("full", "small"):
            disc, case = periodic_disc(p=p, n=2, kind="perturbed", amplitude=0.05, seed=p)
            out.append((disc, case, mode, 0.01, form_ksvd_3d, apply_ksvd_3d))
    for p in (2, 3):
        disc, _ = advection_disc("a", p=p, counts=(2, 2, 2), kind="perturbed", amplitude=0.1, seed=p)
        out.append((disc, None, "full", 0.5, form_ksvd_3d, apply_ksvd_3d))
    return out


def test_criterion_4_preconditioner_solves():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, count = 0.0, 0
    instances = _solve_instances()
    per_config = -(-100 // len(instances))
    for disc, case, mode, step, form, apply in instances:
        u = np.zeros(disc.size) if case is None else noisy_state(disc, case, rng)
        pc = form(disc.linearize(u, dt=step), mode)
        nb = disc.size // pc.approximation(0).shape[0]
        P = [pc.approximation(b) for b in range(nb)]
        for _ in range(per_config):
            rhs = rng.standard_normal(disc.size)
            x = apply(pc, rhs).reshape(nb, -1)
            R = rhs.reshape(nb, -1)
            worst = max(worst, max(rel(P[b] @ x[b], R[b]) for b in range(nb)))
            count += 1
    dt = time.perf_counter() - t0
    verdict(4, worst <= 1e-9 and count >= 100 and dt < 120,
            f"{count} instances, worst block residual {worst:.1e}", dt)


PERIODIC_3D_TABLE = {
    "jacobi_full": [4, 4, 5, 5],
    "ksvd_full": [4, 5, 5, 5],
    "jacobi_small": [5, 6, 7, 8],
    "ksvd_small": [5, 6, 7, 8],
}


def test_criterion_5_periodic_euler_3d_counts():
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "euler_periodic_3d.json")
    rows = run_experiment(cfg).rows
    off, got = [], {}
    for r in rows:
        ref = PERIODIC_3D_TABLE[r.preconditioner][r.p - 1]
        got.setdefault(r.preconditioner, []).append(r.avg_gmres)
        if r.status != "ok" or abs(r.avg_gmres - ref) > 2:
            off.append(f"{r.preconditioner} p={r.p}: {r.avg_gmres} vs {ref}")
    dt = time.perf_counter() - t0
    verdict(5, not off and len(rows) == 16 and dt < 1200, f"counts {got}" + (f" off: {off}" if off else ""), dt)


VORTEX_TABLE = {"jacobi_full": [5, 6, 6, 7, 7, 8], "ksvd_full": [6, 7, 8, 9, 10, 11]}


def test_criterion_6_vortex_counts_and_trend():
    t0 = time.perf_counter()
    rows = by_key(run_experiment(load_config(CONFIGS / "euler_vortex.json")).rows)
    ps = list(range(3, 9))
    problems = []
    for i, p in enumerate(ps):
        J, K = rows[("euler-vortex", p, 0.01, "jacobi_full")], rows[("euler-vortex", p, 0.01, "ksvd_full")]
        if J.status != "ok" or K.status != "ok":
            problems.append(f"p={p} failed")
            continue
        if abs(K.avg_gmres - J.avg_gmres) > 3:
            problems.append(f"p={p}: |K-J|={abs(K.avg_gmres - J.avg_gmres)}")
        for row in (J, K):
            ref = VORTEX_TABLE[row.preconditioner][i]
            if abs(row.avg_gmres - ref) > 4:
                problems.append(f"p={p} {row.preconditioner}: {row.avg_gmres} vs {ref}")
    ratios = [rows[("euler-vortex", p, 0.1, "ksvd_full")].avg_gmres
              / rows[("euler-vortex", p, 0.1, "jacobi_full")].avg_gmres for p in ps]
    if not all(b > a for a, b in zip(ratios, ratios[1:])):
        problems.append(f"K/J at dt=0.1 not increasing: {ratios}")
    dt = time.perf_counter() - t0
    detail = "K/J at dt=0.1 " + ", ".join(f"{x:.2f}" for x in ratios)
    verdict(6, not problems and dt < 1800, detail + (f" problems: {problems}" if problems else ""), dt)


def test_criterion_7_complexity_slopes():
    t0 = time.perf_counter()
    s2 = run_scaling_scan(load_config(CONFIGS / "scan_2d.json")).slopes
    s3 = run_scaling_scan(load_config(CONFIGS / "scan_3d.json")).slopes
    checks = {
        "2d ksvd form": (s2["ksvd_full"]["form"], s2["ksvd_full"]["form"] <= 3.6),
        "2d ksvd apply": (s2["ksvd_full"]["apply"], s2["ksvd_full"]["apply"] <= 3.6),
        "2d jacobi form": (s2["jacobi_full"]["form"], s2["jacobi_full"]["form"] >= 5.0),
        "3d ksvd form": (s3["ksvd_full"]["form"], s3["ksvd_full"]["form"] <= 5.6),
    }
    dt = time.perf_counter() - t0
    verdict(7, all(ok for _, ok in checks.values()) and dt < 1800,
            ", ".join(f"{k} {v:.2f}" for k, (v, _) in checks.items()), dt)


def test_criterion_8_mass_pcg_iterations():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    affine = {}
    for kind, amp in (("cartesian", 0.0), ("scaled", 0.3)):
        for p in range(1, 9):
            disc, _ = advection_disc("a", p=p, counts=(3, 3), kind=kind, amplitude=amp)
            _, its = disc.mass_solve(rng.standard_normal(disc.size), return_iterations=True)
            affine[(kind, p)] = int(its.max())
    curved = []
    spec = MeshSpec("perturbed", (4, 4), VORTEX, amplitude=0.15, seed=7, curvature=0.1, map_degree=3)
    for p in (2, 4, 6, 8):
        disc = make_disc(euler_vortex_case(spec), p, spec)
        _, its = disc.mass_solve(rng.standard_normal(disc.size), return_iterations=True)
        curved.append(int(its.max()))
    dt = time.perf_counter() - t0
    ok = all(v == 1 for v in affine.values()) and all(b <= a for a, b in zip(curved, curved[1:]))
    verdict(8, ok and dt < 120,
            f"affine max {max(affine.values())}, curved p=2,4,6,8 -> {curved}", dt)


def _dt_sweep(scheme, dts, T=0.1):
    cfg = parse_config({"schema_version": 1, "case": "euler_periodic_3d", "mesh": {"counts": [2, 2, 2]},
                        "p": [4], "converge": {"sweep": "dt", "scheme": scheme, "final_time": T, "dts": dts,
                                               "reference": "fine", "reference_dt": T / 160}})
    return [r.rate for r in run_convergence_study(cfg).rows[1:]]


def test_criterion_9_physics():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    defects = []
    for disc, case in (periodic_disc(p=3, n=2, kind="perturbed", amplitude=0.05),
                       advection_disc("a", p=4, counts=(3, 3), kind="perturbed", amplitude=0.1,
                                      periodic=(True, True))):
        u = rng.standard_normal(disc.size) if case.law.linear else noisy_state(disc, case, rng, 0.05)
        defects.append(float(np.abs(disc.conservation_defect(disc.residual(u))).max()))
    T = 0.1
    rates = {"backward_euler": _dt_sweep("backward_euler", [T / 4, T / 8, T / 16]),
             "dirk3": _dt_sweep("dirk3", [T / 2, T / 4, T / 8]),
             "rk4": _dt_sweep("rk4", [T / 10, T / 20, T / 40])}
    orders = {"backward_euler": 1, "dirk3": 3, "rk4": 4}
    spectral = run_convergence_study(load_config(CONFIGS / "converge_periodic_3d.json")).rows
    errors = [r.l2_error for r in spectral]
    problems = []
    if max(defects) > 1e-11:
        problems.append(f"conservation {defects}")
    for s, rs in rates.items():
        if any(abs(r - orders[s]) > 0.3 for r in rs):
            problems.append(f"{s} rates {rs}")
    if any(e is None for e in errors) or not all(b * 2 <= a for a, b in zip(errors, errors[1:])):
        problems.append(f"p errors {errors}")
    dt = time.perf_counter() - t0
    detail = (f"defect {max(defects):.1e}, rates "
              + ", ".join(f"{s} {np.round(rs, 2).tolist()}" for s, rs in rates.items())
              + ", p errors " + ", ".join(f"{e:.1e}" for e in errors if e is not None))
    verdict(9, not problems and dt < 900, detail + (f" problems: {problems}" if problems else ""), dt)
