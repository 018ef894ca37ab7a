"""Experiment orchestration: build package objects from an
ExperimentConfig, dispatch on the experiment tag, collect pass/fail check
records plus plot-ready series, and write report.json + CSVs.

Reports are bit-identical for identical config + seed: every stochastic
ingredient is counter-based-seeded from the master seed, reductions are
deterministic, and wall-clock goes to a run_meta.json sidecar instead of
the report."""

import json
import math
import os
import time
from dataclasses import dataclass, field as _dcfield

import numpy as np

from .. import __version__
from ..fields import PhaseField, PhaseGrid
from ..geometry import Domain
from ..kernels import CollisionModel, SplitOperator, VelocityGrid, estimate_Delta, kq_star
from ..kernels._backend import backend_name
from ..solver import SolverConfig, decay_fit, equation_residual, solve_coupled, solve_f1, solve_full
from ..transport import (
    WallMeasure,
    escape_probability,
    semigroup_diffusive,
    semigroup_specular,
    slab_unfold,
)
from ..weights import Weight, norm as weighted_norm
from .config import ConfigError, load_config
from .diagnostics import check_conservation, check_lower_bound

REPORT_SCHEMA_VERSION = 1


# ----------------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------------


def build_domain(cfg):
    d = cfg.domain
    try:
        if d["kind"] == "slab":
            return Domain.slab()
        if d["kind"] == "ball":
            return Domain.ball(center=d.get("center", (0.0, 0.0, 0.0)),
                               radius=d.get("radius", 1.0))
        return Domain.ellipsoid(center=d.get("center", (0.0, 0.0, 0.0)),
                                semi_axes=d.get("semi_axes", (1.0, 1.0, 1.0)))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid domain: {exc}") from exc


def build_objects(cfg):
    """(pg, model, weight, solver_cfg) from a validated ExperimentConfig."""
    domain = build_domain(cfg)
    g = cfg.grid
    try:
        vg = VelocityGrid(int(g["n_v"]), vmax=float(g["vmax"]))
        pg = PhaseGrid(domain, vg, int(g["n_x"]))
        c = cfg.collision
        model = CollisionModel(
            vg,
            gamma=float(c["gamma"]),
            cphi=float(c["cphi"]),
            n_polar=int(c["n_polar"]),
            n_azimuth=int(c["n_azimuth"]),
            interp_order=int(c["interp_order"]),
            ext_margin=float(c["ext_margin"]),
        )
        w = dict(cfg.weight)
        kind = w.pop("kind", "polynomial")
        weight = Weight(kind=kind, **w)
        solver_cfg = SolverConfig(bc=cfg.bc, weight=weight, seed=cfg.seed,
                                  **cfg.solver)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return pg, model, weight, solver_cfg


def default_bump(pg, amplitude):
    """Smooth deterministic perturbation with O(amplitude) weighted size:
    an x-modulated, velocity-tilted multiple of mu; nonnegative total F
    when amplitude < 1/1.3."""
    vg = pg.vgrid
    tilt = 1.0 + 0.3 * vg.nodes[:, 0] / vg.vmax
    if pg.domain.kind == "slab":
        xmod = np.cos(2.0 * math.pi * pg.centers[:, 0])
    else:
        rel = pg.centers - pg.domain.center
        r2 = np.sum(rel * rel, axis=1)
        xmod = 1.0 - r2 / np.max(r2)
    return amplitude * xmod[:, None] * (vg.mu * tilt)[None, :]


def solver_bump(pg, amplitude, bc, weight=None):
    """default_bump with the globally conserved moments projected out, so
    the perturbation sits in the decaying subspace.  When a weight is given
    the result is rescaled so its weighted sup norm equals `amplitude`
    exactly (the solver smallness conditions are stated in that norm)."""
    from ..kernels import project_PiG

    data = default_bump(pg, amplitude)
    conserved, _ = project_PiG(PhaseField(pg, data), bc)
    data = data - conserved
    if weight is not None:
        n = weighted_norm(PhaseField(pg, data), weight, "Linf_xv_m").value
        if n > 0.0:
            data *= amplitude / n
    return data


def _probe_f0(pg):
    """Closed-form initial datum for semigroup probes, |f0| <= 1."""
    if pg.domain.kind == "slab":
        def f0(x, v):
            return math.cos(2.0 * math.pi * x[0]) * math.exp(-0.25 * float(np.dot(v, v)))
    else:
        c = pg.domain.center
        scale = float(pg.domain.params[0]) if pg.domain.kind == "ball" else float(
            np.max(pg.domain.params))

        def f0(x, v):
            return (x[0] - c[0]) / scale * math.exp(-0.25 * float(np.dot(v, v)))
    return f0


def _sample_phase_points(pg, n, seed, speed_cap=None):
    """n probe points: x uniform in the domain, v drawn from the lattice
    (so nu(v) >= the lattice minimum exactly)."""
    rng = np.random.Generator(np.random.Philox(key=[seed, 101]))
    vg = pg.vgrid
    pts = []
    dom = pg.domain
    while len(pts) < n:
        if dom.kind == "slab":
            x = rng.random(3)
        else:
            rad = dom.params[0] if dom.kind == "ball" else np.max(dom.params)
            x = dom.center + rad * (2.0 * rng.random(3) - 1.0)
            if not dom.inside(x):
                continue
        iv = int(rng.integers(vg.size))
        if speed_cap is not None and vg.speed[iv] > speed_cap:
            continue
        pts.append((x, vg.nodes[iv].copy(), iv))
    return pts


def _check(name, value, bound, op, passed=None, note=""):
    if passed is None:
        passed = {"<=": value <= bound, ">=": value >= bound,
                  "<": value < bound, ">": value > bound}[op]
    rec = {"name": name, "value": float(value), "bound": float(bound),
           "op": op, "passed": bool(passed)}
    if note:
        rec["note"] = note
    return rec


# ----------------------------------------------------------------------------
# runners (one per experiment tag)
# ----------------------------------------------------------------------------


def _run_conservation(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    F0 = PhaseField(pg, pg.maxwellian() + default_bump(pg, cfg.amplitude))
    traj = solve_full(F0, scfg, model)
    cons = check_conservation(traj, cfg.bc)
    checks = [
        _check("mass_drift_rate", cons["mass"]["rate"], 1e-5, "<="),
        _check("min_value", traj.meta["min_value"], -scfg.tol_pos, ">="),
    ]
    if "energy" in cons:
        checks.append(_check("energy_drift_rate", cons["energy"]["rate"], 1e-4, "<="))
    if "angular_momentum" in cons:
        checks.append(_check("angular_momentum_drift_rate",
                             cons["angular_momentum"]["rate"], 1e-4, "<=",
                             note="diagnostic for the ball"))
    if cfg.amplitude == 0.0:
        dev = max(
            float(np.max(np.abs(d - pg.maxwellian()))) for d in traj.datas
        ) / float(np.max(pg.maxwellian()))
        checks.append(_check("mu_fixed_point_deviation", dev, 1e-8, "<="))
    cols = ["t", "mass"]
    rows = [[t, m] for t, m in zip(traj.times, cons["mass"]["series"])]
    for extra in ("energy", "angular_momentum"):
        if extra in cons:
            cols.append(extra)
            for row, val in zip(rows, cons[extra]["series"]):
                row.append(val)
    series = {"moments": (cols, rows)}
    return checks, series, {}


def _run_positivity(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    tau = float(cfg.params.get("tau", 1.0))
    if scfg.T < tau:
        raise ConfigError("solver.T must reach params.tau for the positivity run")
    vg = pg.vgrid
    xmod = (np.cos(2.0 * math.pi * pg.centers[:, 0])
            if pg.domain.kind == "slab"
            else 1.0 - np.sum((pg.centers - pg.domain.center) ** 2, axis=1))
    F0 = PhaseField(pg, pg.maxwellian() * (1.0 + cfg.amplitude * xmod[:, None]))
    traj = solve_full(F0, scfg, model)
    try:
        rho, theta, ok = check_lower_bound(traj, tau, tol_pos=scfg.tol_pos)
        checks = [
            _check("rho_hat", rho, 0.0, ">", passed=ok),
            _check("theta_hat", theta, 0.0, ">"),
        ]
    except ValueError as exc:
        checks = [_check("lower_bound", 0.0, 0.0, ">", passed=False, note=str(exc))]
        rho = theta = 0.0
    min_series = [[t, float(np.min(d))] for t, d in zip(traj.times, traj.datas)]
    from .diagnostics import _lower_bound_curve

    thetas = np.linspace(0.5, 2.0, 76)
    rhos = _lower_bound_curve(traj, tau, vg.vmax - 1.0, thetas)
    series = {
        "minimum": (["t", "min_F"], min_series),
        "lower_bound": (["theta", "rho"], [[a, b] for a, b in zip(thetas, rhos)]),
    }
    return checks, series, {"rho_hat": rho, "theta_hat": theta}


def _run_semigroup_specular(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    domain = pg.domain
    t_values = [float(t) for t in cfg.params.get("t_values", [0.5, 1.0, 2.0])]
    n_probes = int(cfg.params.get("n_probes", 50))
    f0 = _probe_f0(pg)
    nu_min = model.nu_floor
    probes = _sample_phase_points(pg, n_probes, cfg.seed)
    rows, worst_excess, worst_law, worst_oracle = [], 0.0, 0.0, 0.0
    gamma0 = model.gamma == 0.0
    for t in t_values:
        for x, v, iv in probes:
            val = semigroup_specular(domain, model, f0, t, x, v)
            bound = math.exp(-nu_min * t)
            worst_excess = max(worst_excess, abs(val) - bound)
            rows.append([t, x[0], x[1], x[2], v[0], v[1], v[2], val, bound])
            if gamma0 and domain.kind == "slab":
                X1, sgn = slab_unfold(x[0], v[0], t)
                X = np.array([X1, (x[1] - t * v[1]) % 1.0, (x[2] - t * v[2]) % 1.0])
                nu_v = model.nu_profile(float(np.linalg.norm(v)))
                ref = math.exp(-nu_v * t) * f0(
                    X, np.array([sgn * v[0], v[1], v[2]])
                )
                worst_oracle = max(worst_oracle, abs(val - ref))
    # semigroup law on a probe subset
    t_half = t_values[0]
    for x, v, iv in probes[: min(10, len(probes))]:
        one = semigroup_specular(domain, model, f0, 2.0 * t_half, x, v)

        def mid(y, u, _t=t_half):
            return semigroup_specular(domain, model, f0, _t, y, u)

        two = semigroup_specular(domain, model, mid, t_half, x, v)
        worst_law = max(worst_law, abs(one - two))
    checks = [
        _check("decay_bound_excess", worst_excess, 1e-12, "<="),
        _check("semigroup_law_gap", worst_law, 1e-8, "<="),
    ]
    if gamma0 and domain.kind == "slab":
        checks.append(_check("slab_oracle_gap", worst_oracle, 1e-10, "<="))
    series = {"probes": (["t", "x1", "x2", "x3", "v1", "v2", "v3", "value", "decay_bound"], rows)}
    return checks, series, {}


def _run_semigroup_diffusive(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    domain = pg.domain
    t = float(cfg.params.get("t", 1.0))
    n_chains = int(cfg.params.get("n_chains", 400))
    p_max = int(cfg.params.get("p_max", 64))
    n_probes = int(cfg.params.get("n_probes", 20))
    f0 = _probe_f0(pg)
    wm = WallMeasure(pg.vgrid)
    nu_min = model.nu_floor
    probes = _sample_phase_points(pg, n_probes, cfg.seed)
    rows = []
    worst_excess = -math.inf
    worst_af = 0.0
    for k, (x, v, iv) in enumerate(probes):
        est, se, af = semigroup_diffusive(
            domain, model, f0, t, x, v, n_chains, p_max=p_max,
            seed=cfg.seed + k, wall_measure=wm,
        )
        bound = math.exp(-nu_min * t) + 3.0 * se + af
        worst_excess = max(worst_excess, abs(est) - bound)
        worst_af = max(worst_af, af)
        rows.append([x[0], x[1], x[2], v[0], v[1], v[2], est, se, af, bound])
    checks = [
        _check("decay_bound_excess", worst_excess, 0.0, "<="),
        _check("max_active_fraction", worst_af, 0.5, "<="),
    ]
    series = {
        "probes": (["x1", "x2", "x3", "v1", "v2", "v3",
                    "estimate", "stderr", "active_fraction", "decay_bound"], rows)
    }
    return checks, series, {}


def _run_chains(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    domain = pg.domain
    t = float(cfg.params.get("t", 10.0))
    p_values = [int(p) for p in cfg.params.get("p_values", [4, 8, 16, 32])]
    n_chains = int(cfg.params.get("n_chains", 400))
    wm = WallMeasure(pg.vgrid)
    if domain.kind == "slab":
        x = np.array([0.5, 0.25, 0.75])
    else:
        x = np.asarray(domain.center, float) + 0.1
    v = np.array([1.3, 0.7, -0.5])
    rows = []
    for p in p_values:
        esc = escape_probability(domain, wm, t, x, v, p, n_chains, seed=cfg.seed)
        se = math.sqrt(max(esc * (1.0 - esc), 1e-12) / n_chains)
        rows.append([p, esc, se])
    mono_excess = max(
        (rows[i + 1][1] - rows[i][1] - 3.0 * (rows[i][2] + rows[i + 1][2])
         for i in range(len(rows) - 1)),
        default=0.0,
    )
    checks = [_check("escape_monotone_excess", mono_excess, 0.0, "<=")]
    series = {"escape": (["p", "escape_probability", "stderr"], rows)}
    return checks, series, {}


def _run_splitting_constants(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    deltas = [float(d) for d in cfg.params.get("delta_values", [0.4, 0.2, 0.1, 0.05])]
    qp = cfg.params.get("q", "inf")
    q = math.inf if qp == "inf" else float(qp)
    tilde_k = cfg.params.get("tilde_k")
    n_random = int(cfg.params.get("n_random", 8))
    rows, estimates = [], []
    for d in sorted(deltas, reverse=True):
        split = SplitOperator(model, d)
        est = estimate_Delta(split, weight, q, tilde_k=tilde_k,
                             n_random=n_random, seed=cfg.seed)
        estimates.append(est)
        row = [d, est.value, split.R_delta, split.C_A]
        if tilde_k is not None:
            row.append(est.tilde)
        rows.append(row)
    worst_increase = max(
        (estimates[i + 1].value - estimates[i].value for i in range(len(estimates) - 1)),
        default=0.0,
    )
    checks = [_check("Delta_hat_monotone_excess", worst_increase, 0.0, "<=")]
    dsorted = sorted(deltas, reverse=True)
    if len(dsorted) >= 2 and dsorted[0] >= 0.4 and dsorted[-1] <= 0.05:
        first, last = estimates[0], estimates[-1]
        if weight.kind == "stretch_exp" and first.value > 0.0:
            checks.append(_check(
                "endpoint_ratio", last.value / first.value, 0.5, "<"))
        if (weight.kind == "polynomial" and q == math.inf
                and getattr(weight, "k", None) == 10):
            checks.append(_check("Delta_hat_final", last.value, 0.6, "<="))
        if tilde_k == 8 and first.tilde > 0.0:
            checks.append(_check(
                "tilde_endpoint_ratio", last.tilde / first.tilde, 0.5, "<"))
    fits = {}
    if weight.kind == "polynomial":
        try:
            fits["k_star"] = kq_star(q, model.gamma, model.b_inf, model.l_b)
        except ValueError:
            pass
    cols = ["delta", "Delta_hat", "R_delta", "C_A"]
    if tilde_k is not None:
        cols.append("Delta_tilde")
    series = {"splitting": (cols, rows)}
    return checks, series, fits


def _run_solve_linear(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    from dataclasses import replace

    scfg = replace(scfg, q_on=False)
    f0 = PhaseField(pg, solver_bump(pg, cfg.amplitude, cfg.bc, weight))
    traj = solve_f1(f0, None, scfg, model)
    series_n = traj.norm_series(weight)
    fit = decay_fit(series_n, burn_in=scfg.burn_in)
    n0 = weighted_norm(f0, weight, "Linf_xv_m").value
    sup_norm = max(v for _, v in series_n)
    checks = [
        _check("lambda_hat_over_nu0", fit.lambda_hat / model.nu0, 0.5, ">="),
        _check("norm_amplification", sup_norm / max(n0, 1e-300), 3.0, "<="),
        _check("contraction_ratio", max(traj.meta["contraction_ratios"], default=0.0),
               1.0, "<"),
    ]
    series = {"norms": (["t", "norm"], [[t, v] for t, v in series_n])}
    fits = {"C_hat": fit.C_hat, "lambda_hat": fit.lambda_hat, "residual": fit.residual,
            "nu0": model.nu0}
    return checks, series, fits


def _run_solve_nonlinear(cfg):
    pg, model, weight, scfg = build_objects(cfg)
    f0 = PhaseField(pg, solver_bump(pg, cfg.amplitude, cfg.bc, weight))
    f1t, f2t, ft = solve_coupled(f0, scfg, model)
    s1 = f1t.norm_series(weight)
    s2 = f2t.norm_series(weight)
    ss = ft.norm_series(weight)
    fit = decay_fit(ss, burn_in=scfg.burn_in)
    n0 = weighted_norm(f0, weight, "Linf_xv_m").value
    sup_norm = max(v for _, v in ss)
    checks = [
        _check("outer_rounds", ft.meta["outer_rounds"], scfg.max_outer_iters, "<="),
        _check("lambda_hat_over_nu0", fit.lambda_hat / model.nu0, 0.3, ">"),
        _check("norm_amplification", sup_norm / max(n0, 1e-300), 3.0, "<="),
    ]
    if pg.domain.kind == "slab":
        res = equation_residual(ft, scfg, model)
        checks.append(_check("equation_residual", res, scfg.tol_residual, "<="))
    rows = [[t, a, b, c] for (t, a), (_, b), (_, c) in zip(s1, s2, ss)]
    series = {"norms": (["t", "norm_f1", "norm_f2", "norm_f"], rows)}
    fits = {"C_hat": fit.C_hat, "lambda_hat": fit.lambda_hat,
            "residual": fit.residual, "nu0": model.nu0,
            "outer_gaps": ft.meta["outer_gaps"]}
    return checks, series, fits


_RUNNERS = {
    "conservation": _run_conservation,
    "positivity": _run_positivity,
    "semigroup_specular": _run_semigroup_specular,
    "semigroup_diffusive": _run_semigroup_diffusive,
    "chains": _run_chains,
    "splitting_constants": _run_splitting_constants,
    "solve_linear": _run_solve_linear,
    "solve_nonlinear": _run_solve_nonlinear,
}


# ----------------------------------------------------------------------------
# report
# ----------------------------------------------------------------------------


@dataclass
class Report:
    tag: str
    config: dict
    checks: list
    series: dict = _dcfield(default_factory=dict)
    fits: dict = _dcfield(default_factory=dict)
    environment: dict = _dcfield(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    @property
    def all_passed(self):
        return all(c["passed"] for c in self.checks)

    def failing(self):
        return [c for c in self.checks if not c["passed"]]

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "tag": self.tag,
            "config": self.config,
            "checks": self.checks,
            "series": {
                name: {"columns": cols, "csv": f"{name}.csv", "n_rows": len(rows)}
                for name, (cols, rows) in self.series.items()
            },
            "fits": self.fits,
            "environment": self.environment,
            "passed": self.all_passed,
        }


def _fmt_cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(c) for c in row) + "\n")


def write_outputs(report, out_dir, wall_clock):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, (cols, rows) in report.series.items():
        write_csv(os.path.join(out_dir, f"{name}.csv"), cols, rows)
    with open(os.path.join(out_dir, "run_meta.json"), "w") as fh:
        json.dump({"wall_clock_seconds": wall_clock,
                   "finished_unix": time.time()}, fh, indent=2)
        fh.write("\n")


def resolve_output_dir(cfg, override=None):
    if override:
        return override
    if cfg.output_dir:
        return cfg.output_dir
    base = os.environ.get("BOLTZBOX_OUTDIR", ".")
    return os.path.join(base, f"boltzbox_{cfg.tag}")


def run_experiment(config_path, output_dir=None):
    """Load, validate, dispatch, and write outputs.  Returns the Report;
    raises ConfigError for invalid configuration."""
    cfg = load_config(config_path)
    t0 = time.perf_counter()
    checks, series, fits = _RUNNERS[cfg.tag](cfg)
    wall = time.perf_counter() - t0
    report = Report(
        tag=cfg.tag,
        config=cfg.raw,
        checks=checks,
        series=series,
        fits=fits,
        environment={
            "seed": cfg.seed,
            "package_version": __version__,
            "kernel_backend": backend_name,
        },
    )
    out_dir = resolve_output_dir(cfg, output_dir)
    write_outputs(report, out_dir, wall)
    return report
