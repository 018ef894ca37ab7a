"""Command-line entry point.

Subcommands:
  run <config.json> [--output-dir D]    run one experiment, write outputs
  validate <config.json>                parse + validate only
  sweep <config.json> --param K --values a,b,c [--output-dir D]
                                        re-run with K overridden per value

Exit codes: 0 all checks passed, 1 a check or the run failed, 2 invalid
configuration.  --threads caps BLAS/OpenMP workers (set before numerics
load).  BOLTZBOX_OUTDIR sets the default output directory root.

Heavy imports are deferred until after --threads is applied, so keep this
module free of numerics at import time.
"""

import argparse
import copy
import json
import os
import sys


def _build_parser():
    p = argparse.ArgumentParser(
        prog="boltzbox",
        description="kinetic transport/collision experiments in bounded domains",
    )
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads for BLAS/OpenMP pools")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--output-dir", default=None)
    val = sub.add_parser("validate", help="validate a JSON config and exit")
    val.add_argument("config")
    sw = sub.add_parser("sweep", help="run the config once per parameter value")
    sw.add_argument("config")
    sw.add_argument("--param", required=True,
                    help="dotted key path to override, e.g. solver.delta")
    sw.add_argument("--values", required=True,
                    help="comma-separated JSON scalars, e.g. 0.4,0.2,0.1")
    sw.add_argument("--output-dir", default=None)
    return p


def _cap_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(n)


def _set_path(doc, dotted, value):
    cur = doc
    parts = dotted.split(".")
    for part in parts[:-1]:
        cur = cur.setdefault(part, {})
        if not isinstance(cur, dict):
            raise ValueError(f"key path {dotted!r} does not address an object")
    cur[parts[-1]] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _report_lines(report):
    lines = []
    for c in report.checks:
        status = "PASS" if c["passed"] else "FAIL"
        lines.append(
            f"[{status}] {c['name']}: value {c['value']:.6g} {c['op']} bound {c['bound']:.6g}"
        )
    return lines


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.threads is not None and args.threads > 0:
        _cap_threads(args.threads)
    from .config import ConfigError, load_config

    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"configuration valid: tag={cfg.tag}, bc={cfg.bc}")
            return 0
        from .experiments import resolve_output_dir, run_experiment

        if args.command == "run":
            report = run_experiment(args.config, output_dir=args.output_dir)
            for line in _report_lines(report):
                print(line)
            if report.all_passed:
                print(f"all {len(report.checks)} checks passed")
                return 0
            print(f"{len(report.failing())} check(s) failed", file=sys.stderr)
            return 1

        # sweep
        with open(args.config) as fh:
            base_doc = json.load(fh)
        cfg = load_config(args.config)
        values = [_parse_value(v) for v in args.values.split(",")]
        root = args.output_dir or resolve_output_dir(cfg) + "_sweep"
        summary, all_passed = [], True
        for v in values:
            doc = copy.deepcopy(base_doc)
            _set_path(doc, args.param, v)
            safe = str(v).replace("/", "_").replace(" ", "")
            sub_dir = os.path.join(root, f"{args.param}={safe}")
            os.makedirs(sub_dir, exist_ok=True)
            sub_cfg = os.path.join(sub_dir, "config.json")
            with open(sub_cfg, "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
            try:
                report = run_experiment(sub_cfg, output_dir=sub_dir)
            except (ConfigError, ValueError, RuntimeError, OSError) as exc:
                summary.append({"value": v, "passed": False, "error": str(exc)})
                all_passed = False
                print(f"{args.param} = {v}: ERROR ({exc})", file=sys.stderr)
                continue
            summary.append({"value": v, "passed": report.all_passed,
                            "report": os.path.join(sub_dir, "report.json")})
            all_passed &= report.all_passed
            print(f"{args.param} = {v}: {'PASS' if report.all_passed else 'FAIL'}")
        with open(os.path.join(root, "sweep_summary.json"), "w") as fh:
            json.dump({"param": args.param, "runs": summary}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        return 0 if all_passed else 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
