"""Experiment configuration: one human-editable JSON document per run,
parsed strictly -- any key the schema does not know is an error naming the
offending key path.  Values are range-checked here when cheap; everything
else is validated by the module constructors during build."""

import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

EXPERIMENT_TAGS = (
    "semigroup_specular",
    "semigroup_diffusive",
    "chains",
    "splitting_constants",
    "solve_linear",
    "solve_nonlinear",
    "positivity",
    "conservation",
)


class ConfigError(Exception):
    """Invalid experiment configuration (CLI exit code 2)."""


_TOP_KEYS = {
    "schema_version",
    "tag",
    "domain",
    "bc",
    "grid",
    "collision",
    "weight",
    "solver",
    "seeds",
    "amplitude",
    "params",
    "output_dir",
}
_DOMAIN_KEYS = {"kind", "radius", "center", "semi_axes"}
_GRID_KEYS = {"n_v", "vmax", "n_x"}
_COLLISION_KEYS = {"gamma", "cphi", "n_polar", "n_azimuth", "interp_order", "ext_margin"}
_WEIGHT_KEYS = {"kind", "kappa", "alpha", "k", "beta"}
_SOLVER_KEYS = {
    "delta",
    "dt",
    "T",
    "tol_fixed_point",
    "max_inner_iters",
    "max_outer_iters",
    "eta0",
    "eta1",
    "eta2",
    "tol_moment",
    "tol_pos",
    "tol_residual",
    "burn_in",
    "strang",
    "store_stride",
}
_SEED_KEYS = {"master"}

_PARAM_KEYS = {
    "semigroup_specular": {"t_values", "n_probes"},
    "semigroup_diffusive": {"t", "n_chains", "p_max", "n_probes"},
    "chains": {"t", "p_values", "n_chains"},
    "splitting_constants": {"delta_values", "q", "tilde_k", "n_random"},
    "solve_linear": set(),
    "solve_nonlinear": set(),
    "positivity": {"tau"},
    "conservation": set(),
}

_DEFAULTS = {
    "domain": {"kind": "slab"},
    "bc": "specular",
    "grid": {"n_v": 12, "vmax": 6.0, "n_x": 32},
    "collision": {
        "gamma": 1.0,
        "cphi": 1.0 / (4.0 * 3.141592653589793),
        "n_polar": 4,
        "n_azimuth": 6,
        "interp_order": 1,
        "ext_margin": 1.5,
    },
    "weight": {"kind": "polynomial", "k": 10},
    "solver": {},
    "seeds": {"master": 2024},
    "amplitude": 5e-3,
    "params": {},
    "output_dir": None,
}


@dataclass
class ExperimentConfig:
    """Validated experiment description; sub-sections stay as plain dicts
    and are turned into package objects by the builders in experiments."""

    tag: str
    domain: dict
    bc: str
    grid: dict
    collision: dict
    weight: dict
    solver: dict
    seed: int
    amplitude: float
    params: dict
    output_dir: str | None
    raw: dict = field(repr=False, default_factory=dict)


def _reject_unknown(section, allowed, path):
    if not isinstance(section, dict):
        raise ConfigError(f"section {path!r} must be a JSON object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key: {path}.{key}" if path else f"unknown key: {key}")


def _number(doc, path, positive=False):
    cur = doc
    for part in path.split("."):
        if part not in cur:
            return
        cur = cur[part]
    if isinstance(cur, bool) or not isinstance(cur, (int, float)):
        raise ConfigError(f"key {path!r} must be a number")
    if positive and cur <= 0:
        raise ConfigError(f"key {path!r} must be positive")


def validate_config(doc):
    """Validate a parsed JSON document; returns an ExperimentConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"key 'schema_version' must equal {SCHEMA_VERSION} (got {doc.get('schema_version')!r})"
        )
    tag = doc.get("tag")
    if tag not in EXPERIMENT_TAGS:
        raise ConfigError(
            f"key 'tag' must be one of {', '.join(EXPERIMENT_TAGS)} (got {tag!r})"
        )
    merged = {}
    for key, default in _DEFAULTS.items():
        if isinstance(default, dict):
            merged[key] = {**default, **doc.get(key, {})}
        else:
            merged[key] = doc.get(key, default)
    _reject_unknown(merged["domain"], _DOMAIN_KEYS, "domain")
    _reject_unknown(merged["grid"], _GRID_KEYS, "grid")
    _reject_unknown(merged["collision"], _COLLISION_KEYS, "collision")
    _reject_unknown(merged["weight"], _WEIGHT_KEYS, "weight")
    _reject_unknown(merged["solver"], _SOLVER_KEYS, "solver")
    _reject_unknown(merged["seeds"], _SEED_KEYS, "seeds")
    _reject_unknown(merged["params"], _PARAM_KEYS[tag], "params")
    if merged["domain"].get("kind") not in ("slab", "ball", "ellipsoid"):
        raise ConfigError(
            f"key 'domain.kind' must be slab, ball or ellipsoid (got {merged['domain'].get('kind')!r})"
        )
    if merged["bc"] not in ("specular", "diffusive"):
        raise ConfigError(f"key 'bc' must be specular or diffusive (got {merged['bc']!r})")
    for path in ("grid.n_v", "grid.vmax", "grid.n_x", "collision.gamma",
                 "collision.cphi", "amplitude"):
        _number(merged, path)
    for path in ("grid.n_v", "grid.vmax", "grid.n_x"):
        _number(merged, path, positive=True)
    seed = merged["seeds"]["master"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("key 'seeds.master' must be a non-negative integer")
    out_dir = merged["output_dir"]
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("key 'output_dir' must be a string or null")
    return ExperimentConfig(
        tag=tag,
        domain=merged["domain"],
        bc=merged["bc"],
        grid=merged["grid"],
        collision=merged["collision"],
        weight=merged["weight"],
        solver=merged["solver"],
        seed=seed,
        amplitude=float(merged["amplitude"]),
        params=merged["params"],
        output_dir=out_dir,
        raw=doc,
    )


def load_config(path):
    """Read and validate a JSON configuration file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    return validate_config(doc)
