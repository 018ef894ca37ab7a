"""Desk-scale kinetic transport and collision toolkit for bounded domains.

Submodules:
  geometry   -- domains, billiard traces, exit times
  kernels    -- velocity lattice, collision operator, splitting, closed forms
  fields     -- phase-space grids and fields
  weights    -- weight families and weighted norms
  transport  -- boundary semigroups (exact, Monte-Carlo, deterministic stepper)
  solver     -- Duhamel fixed point, coupled alternation, direct solver
  harness    -- configuration, experiments, CLI

Top-level names re-export lazily from their home submodules.
"""

__version__ = "0.1.0"

_LAZY = {
    "Domain": "geometry",
    "backward_exit_time": "geometry",
    "trace_specular": "geometry",
    "VelocityGrid": "kernels",
    "CollisionModel": "kernels",
    "SplitOperator": "kernels",
    "SphereRule": "kernels",
    "maxwellian": "kernels",
    "q_bilinear": "kernels",
    "PhaseGrid": "fields",
    "PhaseField": "fields",
    "slab_grid": "fields",
    "ball_grid": "fields",
    "Weight": "weights",
    "NormReport": "weights",
    "norm": "weights",
    "embed_check": "weights",
    "WallMeasure": "transport",
    "step_transport": "transport",
    "semigroup_specular": "transport",
    "semigroup_diffusive": "transport",
    "escape_probability": "transport",
    "SolverConfig": "solver",
    "Trajectory": "solver",
    "DecayFit": "solver",
    "decay_fit": "solver",
    "solve_f1": "solver",
    "solve_f2": "solver",
    "solve_coupled": "solver",
    "solve_full": "solver",
    "uniqueness_probe": "solver",
}

__all__ = ["__version__", *_LAZY]


def __getattr__(name):
    if name in _LAZY:
        import importlib

        mod = importlib.import_module(f".{_LAZY[name]}", __name__)
        return getattr(mod, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
