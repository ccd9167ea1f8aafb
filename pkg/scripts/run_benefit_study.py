#!/usr/bin/env python3
"""Run the desk-scale benefit study (plain vs NL vs SNL) and print medians.

Usage:
    python scripts/run_benefit_study.py [--seeds 5] [--jobs 2] [--out results.csv]

Full scale (defaults) is 5 seeds x 3 variants x 30 epochs on the synthetic
long-range task; expect roughly 10-20 minutes on a 2-core desktop.
"""

import argparse
import csv
import sys
import time

from specnl.study import run_study


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--train-size", type=int, default=None)
    ap.add_argument("--test-size", type=int, default=None)
    ap.add_argument("--out", default=None, help="optional per-run CSV")
    args = ap.parse_args()

    t0 = time.time()
    result = run_study(seeds=tuple(range(args.seeds)), jobs=args.jobs,
                       train_size=args.train_size, test_size=args.test_size,
                       epochs=args.epochs)
    minutes = (time.time() - t0) / 60

    for line in result.summary_lines():
        print(line)
    plain = result.median_top1("none")
    snl = result.median_top1("SNL")
    nl = result.median_top1("NL")
    print(f"SNL - plain margin: {100 * (snl - plain):+.2f} points")
    print(f"SNL - NL    margin: {100 * (snl - nl):+.2f} points")
    print(f"total wall time: {minutes:.1f} min")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "final_top1", "final_top5"])
            for r in result.runs:
                w.writerow([r.variant, r.seed, r.final_top1, r.final_top5])
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
