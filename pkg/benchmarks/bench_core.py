"""Timing comparison of the compiled quadrature core against the numpy
fallback.

Runs the two hot operations — the bilinear collision sweep and the dense
K-matrix build — under whichever backend the current process selected,
then (unless --single) re-executes itself with BOLTZBOX_FORCE_FALLBACK=1
and prints the side-by-side table.  Backend choice happens at import time,
hence the subprocess.

Usage:
    python3 benchmarks/bench_core.py [--n 10] [--repeats 3] [--single]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def run_case(n, repeats):
    from boltzbox.kernels import CollisionModel, VelocityGrid, q_bilinear
    from boltzbox.kernels._backend import backend_name

    vg = VelocityGrid(n, 6.0)
    model = CollisionModel(vg, gamma=1.0, n_polar=3, n_azimuth=6,
                           interp_order=1)
    rng = np.random.default_rng(0)
    f = rng.standard_normal((4, vg.size)) * vg.mu

    # warm-up pass compiles nothing but touches caches fairly
    q_bilinear(model, f, conserve=False)
    t_q = min(
        _timed(lambda: q_bilinear(model, f, conserve=False))
        for _ in range(repeats)
    )

    model._K = None  # drop the cache so each build is measured cold
    t_k = min(_timed(lambda: _rebuild_K(model)) for _ in range(repeats))
    return {"backend": backend_name, "n": n, "q_bilinear_s": t_q,
            "K_build_s": t_k}


def _rebuild_K(model):
    model._K = None
    return model.K_matrix


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=10, help="velocity nodes per axis")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--single", action="store_true",
                    help="time only the current backend, emit JSON")
    args = ap.parse_args()

    if args.single:
        print(json.dumps(run_case(args.n, args.repeats)))
        return

    here = run_case(args.n, args.repeats)
    env = dict(os.environ, BOLTZBOX_FORCE_FALLBACK="1")
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--single",
         "--n", str(args.n), "--repeats", str(args.repeats)],
        env=env, capture_output=True, text=True, check=True,
    )
    other = json.loads(out.stdout.strip().splitlines()[-1])
    rows = [here, other] if here["backend"] != other["backend"] else [here]
    print(f"{'backend':>10} {'n':>4} {'q_bilinear [s]':>16} {'K build [s]':>14}")
    for r in rows:
        print(f"{r['backend']:>10} {r['n']:>4} {r['q_bilinear_s']:>16.4f} "
              f"{r['K_build_s']:>14.4f}")
    if len(rows) == 2 and rows[1]["q_bilinear_s"] > 0:
        print(f"\nspeedup: q_bilinear x{rows[1]['q_bilinear_s']/rows[0]['q_bilinear_s']:.1f}, "
              f"K build x{rows[1]['K_build_s']/rows[0]['K_build_s']:.1f}")


if __name__ == "__main__":
    main()
