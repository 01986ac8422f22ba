"""Command-line entry point: ``ksvddg <verb> --config FILE [options]``.

Exit status: 0 on success, 2 for configuration errors, 3 if any cell
failed, 4 if a stored baseline was not reproduced.  Log verbosity comes
from ``KSVDDG_LOG`` (a logging level name, default ``WARNING``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
from pathlib import Path

LOG_ENV = "KSVDDG_LOG"
EXIT_OK, EXIT_CONFIG, EXIT_FAILED, EXIT_BASELINE = 0, 2, 3, 4
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksvddg", description="KSVD-preconditioned DG experiment runner")
    sub = ap.add_subparsers(dest="verb", required=True)
    helps = {
        "run": "iteration-count experiment over the (p, dt, preconditioner) grid",
        "scan": "form/apply timing scan with log-log slope fits",
        "converge": "error-convergence study against exact or reference solutions",
        "validate-config": "check a config file and exit",
    }
    for verb, text in helps.items():
        sp = sub.add_parser(verb, help=text)
        sp.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        if verb == "validate-config":
            continue
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: config output.dir)")
        sp.add_argument("--seed", type=int, default=None, help="override the config RNG seed")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for BLAS and numba")
        sp.add_argument("--precond", default=None,
                        help="run a single preconditioner (jacobi_full, jacobi_small, ksvd_full, ksvd_small)")
    return ap


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _set_threads(n: int):
    # must happen before numpy/numba are imported to take effect for BLAS
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _environment(threads) -> dict:
    import numpy
    import scipy
    return {"python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "threads": threads, "platform": platform.platform()}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging()
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)

    from ..errors import ConfigError
    from . import config as cfgmod
    from . import experiments as ex

    try:
        cfg = cfgmod.load_config(args.config)
        if args.verb == "validate-config":
            print(f"{args.config}: ok ({cfg.case}, {len(cfg.p)} degree(s), "
                  f"{len(ex.variants(cfg)) * len(cfg.p) * len(cfg.dt) * len(cfg.preconditioners)} cell(s))")
            return EXIT_OK
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.precond is not None:
            over["preconditioners"] = [args.precond]
        if over:
            cfg = cfg.replace(**over)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.threads:
        try:
            import numba
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except (ImportError, ValueError):
            pass

    out = args.out or Path(cfg.output["dir"])
    doc = {"schema_version": cfgmod.SCHEMA_VERSION, "verb": args.verb, "config": cfg.to_dict(),
           "environment": _environment(args.threads)}
    status = EXIT_OK
    try:
        if args.verb == "run":
            rep = ex.run_experiment(cfg)
            ex.write_csv(rep.rows, out / "report.csv", ex.CSV_COLUMNS)
            doc["rows"] = [dataclasses.asdict(r) for r in rep.rows]
            doc["summary"] = rep.summary()
            if cfg.output.get("history"):
                ex.write_histories(rep.histories, out / "history")
            bpath = ex.baseline_path(args.config)
            if bpath.exists():
                cmp = ex.compare_baseline(rep.rows, json.loads(bpath.read_text()))
                doc["baseline"] = {"file": str(bpath), "comparisons": cmp}
                if not all(c["ok"] for c in cmp):
                    logging.getLogger("ksvddg").warning("baseline values not reproduced (see report.json)")
                    status = EXIT_BASELINE
            if rep.failures:
                status = EXIT_FAILED
        elif args.verb == "scan":
            rep = ex.run_scaling_scan(cfg)
            ex.write_csv(rep.rows, out / "report.csv", ex.SCAN_COLUMNS)
            doc["rows"] = [dataclasses.asdict(r) for r in rep.rows]
            doc["summary"] = rep.summary()
        else:
            rep = ex.run_convergence_study(cfg)
            ex.write_csv(rep.rows, out / "report.csv", ex.CONVERGENCE_COLUMNS)
            doc["rows"] = [dataclasses.asdict(r) for r in rep.rows]
            doc["summary"] = rep.summary()
            if rep.failures:
                status = EXIT_FAILED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ex.write_json(doc, out / "report.json")
    summary = doc["summary"]
    if "failed" in summary:
        print(f"{args.verb}: {summary['cells']} cell(s), {summary['failed']} failed; reports in {out}")
        for f in summary["failures"]:
            print(f"  FAILED {f['code']}: {f['message']}")
    else:
        slopes = ", ".join(f"{k} form {v['form']:.2f} apply {v['apply']:.2f}" for k, v in summary["slopes"].items())
        print(f"scan: slopes {slopes}; reports in {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
