"""Experiment harness: strict JSON configuration, experiment dispatch,
diagnostics, and the command-line interface.

Numerics-heavy members load lazily so the CLI can apply --threads before
the linear-algebra pools initialize.
"""

from .config import (
    EXPERIMENT_TAGS,
    SCHEMA_VERSION,
    ConfigError,
    ExperimentConfig,
    load_config,
    validate_config,
)

_LAZY = {
    "Report": "experiments",
    "build_objects": "experiments",
    "default_bump": "experiments",
    "solver_bump": "experiments",
    "run_experiment": "experiments",
    "resolve_output_dir": "experiments",
    "write_csv": "experiments",
    "check_conservation": "diagnostics",
    "check_lower_bound": "diagnostics",
    "continuity_probe": "diagnostics",
    "evaluate_phase": "diagnostics",
    "main": "cli",
}

__all__ = [
    "EXPERIMENT_TAGS",
    "SCHEMA_VERSION",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "validate_config",
    *_LAZY,
]


def __getattr__(name):
    if name in _LAZY:
        import importlib

        mod = importlib.import_module(f".{_LAZY[name]}", __name__)
        return getattr(mod, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
