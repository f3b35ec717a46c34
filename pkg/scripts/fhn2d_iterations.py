#!/usr/bin/env python3
"""2D iteration-count experiment: FitzHugh-Nagumo on the unit square.

Sweeps polynomial degrees and preconditioners on the 128x128 mesh and writes
per-step iteration CSVs plus a summary table (mean/std/min/max per
configuration).  Use --steps 4000 for the full simulated horizon; the default
400 steps covers the activation phase in a few tens of minutes.
"""

import argparse
import csv
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from polymg import config as cfgm
from polymg import timeloop as tl


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--degrees", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--preconds", nargs="+", default=["agglomg", "bjacobi"],
                    choices=["agglomg", "bjacobi", "none"])
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--operator", default="matrix-free",
                    choices=["matrix-free", "matrix-based"])
    ap.add_argument("--out", default="out/fhn2d")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for p in args.degrees:
        for precond in args.preconds:
            cfg = cfgm.SimulationConfig()
            cfg.degree = p
            cfg.operator = args.operator
            cfg.time.t_final = args.steps * cfg.time.dt
            cfg.solver.abs_tol = 1e-14
            cfg.solver.max_iter = 500
            cfg.solver.precond = precond
            cfg.mg.levels = args.levels
            t0 = time.perf_counter()
            sim, recs, summary = tl.run(cfg)
            wall = time.perf_counter() - t0
            rows.append((p, precond, summary.mean_iterations,
                         summary.std_iterations, summary.min_iterations,
                         summary.max_iterations, wall))
            path = os.path.join(args.out, f"iters_p{p}_{precond}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "time", "iterations"])
                for r in recs:
                    w.writerow([r.index, r.time, r.pcg_iterations])
            print(f"p={p} {precond}: mean {summary.mean_iterations:.2f} "
                  f"std {summary.std_iterations:.2f} "
                  f"min {summary.min_iterations} max {summary.max_iterations} "
                  f"({wall:.0f} s)", flush=True)

    with open(os.path.join(args.out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["degree", "precond", "mean", "std", "min", "max", "wall_s"])
        w.writerows(rows)
    print(f"summary written to {args.out}/summary.csv")


if __name__ == "__main__":
    main()
