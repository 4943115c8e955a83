"""Time one attention layer (DGA vs all-pairs) across graph sizes.

Writes report.json and prints a per-size table with the fitted log-log slopes
and the closed-form FLOP ratio.

    python3 scripts/run_profile.py --sizes 500,1000,2000,4000 --out report.json
"""
import argparse
import logging
from pathlib import Path

from dgt.bench import scaling_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="500,1000,2000,4000")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seq-len", type=int, default=32)
    ap.add_argument("--criteria", default="bfs,ppr,feat")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="report.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sizes = [int(s) for s in args.sizes.split(",")]
    rep = scaling_benchmark(sizes, repeats=args.repeats, criteria=args.criteria, seq_len=args.seq_len, seed=args.seed)
    Path(args.out).write_text(rep.to_json() + "\n", encoding="utf-8")

    print(f"{'N':>6} {'DGA ms':>9} {'MHA ms':>9} {'FLOP ratio':>11}")
    for n, d, m, r in zip(rep.sizes, rep.dga_ms, rep.mha_ms, rep.flop_ratio):
        print(f"{n:>6} {d:>9.1f} {m:>9.1f} {r:>11.2f}")
    print(f"log-log slope: DGA {rep.dga_slope:.3f}, full MHA {rep.mha_slope:.3f}")
    print(f"report -> {args.out}")


if __name__ == "__main__":
    main()
