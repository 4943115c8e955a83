"""Run an ablation grid and print mean +- 95% CI per cell.

With two cells given by --compare, also runs a one-sided paired t-test over
the shared repeat seeds (e.g. relative/multi-criteria vs absolute/random).

    python3 scripts/run_ablation.py scripts/grids/ordering_ablation.json --compare RM AR
"""
import argparse
import logging
from pathlib import Path

import numpy as np
from scipy import stats

from dgt.train import GridSpec, format_table, run_ablation_grid, summarize


def paired_comparison(rows, axis, better, worse):
    by = {}
    for r in rows:
        by.setdefault(r[axis], {})[r["seed"]] = r["test_acc"]
    seeds = sorted(set(by[better]) & set(by[worse]))
    a = np.array([by[better][s] for s in seeds])
    b = np.array([by[worse][s] for s in seeds])
    p = stats.ttest_rel(a, b, alternative="greater").pvalue if len(seeds) > 1 else float("nan")
    return a.mean(), b.mean(), int((a > b).sum()), len(seeds), float(p)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("grid")
    ap.add_argument("--out")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--compare", nargs=2, metavar=("BETTER", "WORSE"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    spec = GridSpec.from_json(args.grid)
    out = Path(args.out or Path("results") / Path(args.grid).stem)
    rows = run_ablation_grid(spec, out, workers=args.workers)
    axes = list(spec.axes)
    print(format_table(summarize(rows, axes), axes))
    if args.compare:
        if len(axes) != 1:
            raise SystemExit("--compare needs a single-axis grid")
        hi, lo, wins, n, p = paired_comparison(rows, axes[0], *args.compare)
        print(f"{args.compare[0]} {hi:.4f} vs {args.compare[1]} {lo:.4f}: wins {wins}/{n}, one-sided paired t p={p:.3g}")
    print(f"results -> {out / 'results.csv'}")


if __name__ == "__main__":
    main()
