"""``dgt`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
``DGT_THREADS`` caps BLAS threads and ablation workers.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graph import GraphDataError, load_graph, load_split, make_split
from .katz import KatzConfig, compute_katz, read_katz, write_katz
from .model import DgtModel, ModelConfig, forward, new_records
from .sequences import PprParams, build_sequences, parse_criteria, read_sequences, write_sequences
from .dga import attention_scores

log = logging.getLogger("dgt")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
GRAPH_FILES = ("edges.tsv", "features.tsv", "labels.tsv", "splits.json")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _threads() -> int | None:
    raw = os.environ.get("DGT_THREADS")
    if raw is None:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"DGT_THREADS must be an integer, got {raw!r}") from None


def content_hash(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _load_graph(path):
    try:
        return load_graph(path)
    except GraphDataError as exc:
        raise DataError(str(exc)) from None


# -- preprocess ---------------------------------------------------------------


def cmd_preprocess(args) -> int:
    g = _load_graph(args.data)
    try:
        criteria = parse_criteria(args.criteria)
        katz_cfg = KatzConfig(args.katz_beta, args.katz_k, args.katz_anchors)
        katz_cfg.validate()
        seqs = build_sequences(g, criteria, args.seq_len, args.ordering, seed=args.seed, ppr=PprParams())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    katz = compute_katz(g, katz_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sequences(seqs, out / "sequences.bin")
    write_katz(katz, out / "katz.bin")
    manifest = {
        "seq_len": args.seq_len,
        "criteria": [c.value for c in criteria],
        "ordering": args.ordering,
        "seed": args.seed,
        "katz": {"beta": args.katz_beta, "max_power": args.katz_k, "num_anchors": katz.dim},
        "input_hash": content_hash(Path(args.data) / f for f in GRAPH_FILES),
    }
    (out / "preprocess.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'sequences.bin'} and {out / 'katz.bin'} (S={args.seq_len}, T={len(criteria)}, N'={katz.dim})")
    return 0


def _load_artifacts(art_dir: Path):
    for name in ("sequences.bin", "katz.bin", "preprocess.json"):
        if not (art_dir / name).is_file():
            raise DataError(f"missing artifact {art_dir / name}; run `dgt preprocess` first")
    pre = json.loads((art_dir / "preprocess.json").read_text(encoding="utf-8"))
    return read_sequences(art_dir / "sequences.bin"), read_katz(art_dir / "katz.bin"), pre


# -- train --------------------------------------------------------------------


def _check_config_vs_preprocess(model_cfg: ModelConfig, raw_model: dict, pre: dict):
    katz_raw = raw_model.get("katz", {})
    for key in ("beta", "max_power"):
        if key in katz_raw and katz_raw[key] != pre["katz"][key]:
            raise UsageError(
                f"config katz.{key}={katz_raw[key]} conflicts with preprocessed value {pre['katz'][key]}"
            )
    if katz_raw.get("num_anchors") not in (None, pre["katz"]["num_anchors"]):
        raise UsageError("config katz.num_anchors conflicts with preprocessed Katz features")


def cmd_train(args) -> int:
    from .train import TrainConfig, train

    data_dir = Path(args.data)
    art_dir = Path(args.artifacts or args.data)
    g = _load_graph(data_dir)
    if g.labels is None:
        raise DataError("training needs labels.tsv")
    seqs, katz, pre = _load_artifacts(art_dir)
    if pre["input_hash"] != content_hash(data_dir / f for f in GRAPH_FILES):
        raise UsageError("artifacts were preprocessed from different graph files")
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
        raw_model = raw.get("model", {})
        model_cfg = ModelConfig(**raw_model)
        train_cfg = TrainConfig(**raw.get("train", {}))
    except (TypeError, ValueError, OSError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    _check_config_vs_preprocess(model_cfg, raw_model, pre)
    model_cfg.katz = KatzConfig(pre["katz"]["beta"], pre["katz"]["max_power"], pre["katz"]["num_anchors"])

    split = load_split(data_dir) or make_split(g, seed=raw.get("split_seed", train_cfg.seed))
    model = DgtModel(model_cfg, g.feature_dim, g.num_classes, len(seqs.criteria), seqs.seq_len, katz.dim)
    result = train(model, g, seqs, katz if model_cfg.pe_mode == "katz" else None, split, train_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ad.save_params(model.params, out / "model.ckpt")
    manifest = {
        "model": model_cfg.to_dict(),
        "train": raw.get("train", {}) | {"seed": train_cfg.seed, "lr": train_cfg.lr, "weight_decay": train_cfg.weight_decay},
        "split_seed": raw.get("split_seed", train_cfg.seed),
        "preprocess": pre,
        "data_dir": str(data_dir.resolve()),
        "artifacts_dir": str(art_dir.resolve()),
        "input_hash": content_hash(
            [*(data_dir / f for f in GRAPH_FILES), art_dir / "sequences.bin", art_dir / "katz.bin"]
        ),
        "feature_dim": g.feature_dim,
        "num_classes": g.num_classes,
        "criteria_count": len(seqs.criteria),
        "seq_len": seqs.seq_len,
        "katz_dim": katz.dim,
        "num_parameters": model.num_parameters(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    run = result.to_dict()
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n", encoding="utf-8")
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "repeat", "seed", "best_val_acc", "test_acc", "epochs", "wall_ms"])
        w.writerow([0, 0, train_cfg.seed, result.best_val_acc, result.test_acc, result.epochs_run, round(sum(result.epoch_ms), 1)])
    print(
        f"best val acc {result.best_val_acc:.4f} at epoch {result.best_epoch}; "
        f"test acc {result.test_acc:.4f}; {result.epochs_run} epochs"
    )
    return 0


def _restore(checkpoint: Path, data_override: str | None, art_override: str | None):
    manifest_path = checkpoint.parent / "manifest.json"
    if not checkpoint.is_file():
        raise DataError(f"missing checkpoint {checkpoint}")
    if not manifest_path.is_file():
        raise DataError(f"missing manifest {manifest_path}")
    man = json.loads(manifest_path.read_text(encoding="utf-8"))
    data_dir = Path(data_override or man["data_dir"])
    art_dir = Path(art_override or man["artifacts_dir"])
    g = _load_graph(data_dir)
    seqs, katz, _ = _load_artifacts(art_dir)
    if g.feature_dim != man["feature_dim"] or len(seqs.criteria) != man["criteria_count"]:
        raise UsageError("data/artifacts conflict with the checkpoint manifest")
    cfg = ModelConfig(**man["model"])
    model = DgtModel(cfg, g.feature_dim, man["num_classes"], man["criteria_count"], man["seq_len"], man["katz_dim"])
    try:
        model.load_state(ad.load_params(checkpoint))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return man, g, seqs, (katz if cfg.pe_mode == "katz" else None), model, data_dir


def cmd_eval(args) -> int:
    from .train import evaluate

    man, g, seqs, katz, model, data_dir = _restore(Path(args.checkpoint), args.data, args.artifacts)
    if g.labels is None:
        raise DataError("evaluation needs labels.tsv")
    split = load_split(data_dir) or make_split(g, seed=man["split_seed"])
    ids = {"train": split.train_ids, "val": split.val_ids, "test": split.test_ids}[args.split]
    acc = evaluate(model, g, seqs, katz, ids)
    print(json.dumps({"split": args.split, "accuracy": acc, "count": int(len(ids))}))
    return 0


# -- explain ------------------------------------------------------------------


def same_label_ratio(scores: np.ndarray, labels: np.ndarray, query: int, nodes=None) -> float:
    """Share of attention mass on nodes with the query's label."""
    nodes = np.arange(len(scores)) if nodes is None else np.asarray(nodes)
    total = scores[nodes].sum()
    if total <= 0:
        return float("nan")
    same = nodes[labels[nodes] == labels[query]]
    return float(scores[same].sum() / total)


def explain_node(model, g, seqs, katz, query: int, topk: int = 20, layer: int = -1) -> dict:
    records = new_records(model)
    with ad.no_grad():
        forward(model, g, seqs, katz, records=records)
    scores = attention_scores(query, records[layer], g.num_nodes)
    order = np.lexsort((np.arange(g.num_nodes), -scores))[:topk]
    order = order[scores[order] > 0]
    rows = []
    for rank, node in enumerate(order, 1):
        row = {"rank": rank, "node": int(node), "score": float(scores[node])}
        if g.labels is not None:
            row["label"] = int(g.labels[node])
            row["same_label"] = bool(g.labels[node] == g.labels[query])
        rows.append(row)
    out = {"query": query, "rows": rows, "total_score": float(scores.sum())}
    if g.labels is not None:
        out["query_label"] = int(g.labels[query])
        out["same_label_ratio_topk"] = same_label_ratio(scores, g.labels, query, order)
        out["same_label_ratio_all"] = same_label_ratio(scores, g.labels, query)
    return out


def cmd_explain(args) -> int:
    _, g, seqs, katz, model, _ = _restore(Path(args.checkpoint), args.data, args.artifacts)
    if not 0 <= args.node < g.num_nodes:
        raise UsageError(f"--node must lie in [0, {g.num_nodes})")
    res = explain_node(model, g, seqs, katz, args.node, args.topk, args.layer)
    if args.json:
        print(json.dumps(res, indent=2))
        return 0
    print(f"query {res['query']}" + (f" (label {res['query_label']})" if "query_label" in res else ""))
    print(f"{'rank':>4} {'node':>6} {'score':>10} {'label':>5} same")
    for r in res["rows"]:
        print(f"{r['rank']:>4} {r['node']:>6} {r['score']:>10.5f} {r.get('label', '-'):>5} {'yes' if r.get('same_label') else 'no'}")
    if "same_label_ratio_topk" in res:
        print(f"same-label score ratio (top-{args.topk}): {res['same_label_ratio_topk']:.4f}")
        print(f"same-label score ratio (all nodes): {res['same_label_ratio_all']:.4f}")
    return 0


# -- profile / ablate --------------------------------------------------------


def cmd_profile(args) -> int:
    from .bench import TimerResolutionError, scaling_benchmark

    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
        report = scaling_benchmark(sizes, repeats=args.repeats, criteria=args.criteria, seq_len=args.seq_len, seed=args.seed)
    except (ValueError, TimerResolutionError) as exc:
        raise UsageError(str(exc)) from None
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"DGA slope {report.dga_slope:.3f}, full-MHA slope {report.mha_slope:.3f} -> {args.out}")
    return 0


def cmd_ablate(args) -> int:
    from .train import GridSpec, format_table, run_ablation_grid, summarize

    try:
        spec = GridSpec.from_json(args.grid)
        spec.cells()
    except (ValueError, TypeError, OSError) as exc:
        raise UsageError(f"bad grid spec: {exc}") from None
    out = Path(args.out or Path(args.grid).with_suffix(""))
    rows = run_ablation_grid(spec, out, workers=_threads() or 1)
    axes = list(spec.axes)
    print(format_table(summarize(rows, axes), axes))
    print(f"results -> {out / 'results.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dgt", description="Deformable graph transformer toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build node sequences and Katz features")
    p.add_argument("--data", required=True)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--criteria", default="bfs,ppr,feat")
    p.add_argument("--ordering", choices=("relative", "absolute"), default="relative")
    p.add_argument("--katz-beta", type=float, default=0.1)
    p.add_argument("--katz-k", type=int, default=3)
    p.add_argument("--katz-anchors", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on preprocessed data")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--artifacts", help="preprocess output dir (default: --data)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--artifacts")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("profile", help="DGA vs full-attention scaling benchmark")
    p.add_argument("--sizes", default="500,1000,2000,4000")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--criteria", default="bfs,ppr,feat")
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="report.json")
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("explain", help="top-k attended nodes for a query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--topk", type=int, default=20)
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--data")
    p.add_argument("--artifacts")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    from .train import NumericFailure

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = _threads()
        with threadpool_limits(limits=threads) if threads else nullcontext():
            return args.fn(args)
    except UsageError as exc:
        print(f"dgt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphDataError, FileNotFoundError) as exc:
        print(f"dgt: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, FloatingPointError) as exc:
        print(f"dgt: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
