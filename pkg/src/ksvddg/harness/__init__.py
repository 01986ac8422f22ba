"""Experiment configs, drivers and the ``ksvddg`` command line.

Submodules are imported on demand so that ``--threads`` can set BLAS
thread counts before numpy loads.
"""

import importlib

_EXPORTS = {
    "ExperimentConfig": "config", "load_config": "config", "parse_config": "config",
    "SCHEMA_VERSION": "config",
    "run_experiment": "experiments", "run_scaling_scan": "experiments",
    "run_convergence_study": "experiments", "ReportRow": "experiments",
    "write_csv": "experiments", "fit_slope": "experiments", "compare_baseline": "experiments",
    "main": "cli",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(name)
