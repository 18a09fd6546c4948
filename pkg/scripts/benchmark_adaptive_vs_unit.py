"""Desk-scale replicate benchmark: adaptive vs unit penalty weights.

Runs the mixed-structure scenario (main effects plus their cousin or sibling
CMEs) over seeded replicates, tuning each arm by cross-validation, and
writes per-replicate and aggregate CSVs plus a paired sign test on F1.
"""

import argparse
import time

import numpy as np
from scipy.stats import binomtest

from cmeselect import ScenarioSpec, run_replicates
from cmeselect.cli import write_csv


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--p", type=int, default=20)
    ap.add_argument("--rho", type=float, default=0.0)
    ap.add_argument("--family", default="gaussian")
    ap.add_argument("--structure", default="main_plus_cousins")
    ap.add_argument("--n-groups", type=int, default=4)
    ap.add_argument("--beta-me", type=float, default=5.0)
    ap.add_argument("--beta-cme", type=float, default=1.0)
    ap.add_argument("--beta0", type=float, default=0.0)
    ap.add_argument("--n-reps", type=int, default=20)
    ap.add_argument("--gamma", type=float, default=10.0)
    ap.add_argument("--tau", type=float, default=0.02)
    ap.add_argument("--nlambda", type=int, default=20)
    ap.add_argument("--n-folds", type=int, default=5)
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", default="bench_out")
    return ap.parse_args()


def main():
    args = parse_args()
    spec = ScenarioSpec(n=args.n, p=args.p, rho=args.rho, family=args.family,
                        structure=args.structure, n_groups=args.n_groups,
                        beta_me=args.beta_me, beta_cme=args.beta_cme,
                        beta0=args.beta0, seed=args.seed)
    common = {"gamma_grid": (args.gamma,), "tau_grid": (args.tau,),
              "rho_grid": (0.35, 0.5, 0.65), "nlambda": args.nlambda,
              "lambda_min_ratio": 0.01, "n_folds": args.n_folds}
    methods = [dict(common, label="adaptive", weights="adaptive"),
               dict(common, label="unit", weights="unit")]
    t0 = time.time()
    rows, aggregate = run_replicates(spec, methods, args.n_reps,
                                     n_jobs=args.threads)
    from pathlib import Path

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = sorted({k for r in rows for k in r})
    write_csv(out / "replicates.csv", fields,
              [[("" if r.get(f) is None else r.get(f, "")) for f in fields]
               for r in rows])
    afields = ["scenario", "family", "method", "metric", "n_groups", "mean",
               "se", "n_reps", "n_failed"]
    write_csv(out / "aggregate.csv", afields,
              [[a[f] for f in afields] for a in aggregate])

    f1 = {m: np.array([r["f1"] for r in rows
                       if r["method"] == m and "error" not in r])
          for m in ("adaptive", "unit")}
    wins = int(np.sum(f1["adaptive"] > f1["unit"]))
    losses = int(np.sum(f1["adaptive"] < f1["unit"]))
    p = binomtest(wins, wins + losses, alternative="greater").pvalue \
        if wins + losses else 1.0
    print(f"adaptive mean F1: {f1['adaptive'].mean():.4f}; "
          f"unit mean F1: {f1['unit'].mean():.4f}")
    print(f"paired sign test: {wins} wins / {losses} losses, "
          f"one-sided p = {p:.4f}")
    print(f"elapsed {time.time() - t0:.0f}s; tables in {out}/")


if __name__ == "__main__":
    main()
