"""Regenerate the small dataset shipped in data/toy/."""
import argparse

from dgt.graph import SbmConfig, generate_sbm, make_split, write_graph


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/toy")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    g = generate_sbm(SbmConfig(num_nodes=60, num_classes=3, intra_edge_prob=0.25,
                               inter_edge_prob=0.03, feature_dim=8, feature_signal=0.8, seed=args.seed))
    write_graph(g, args.out, make_split(g, seed=args.seed))
    print(f"wrote {g.num_nodes} nodes / {g.num_edges} edges to {args.out}")


if __name__ == "__main__":
    main()
