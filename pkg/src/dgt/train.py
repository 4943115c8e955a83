"""Full-batch training with early stopping, evaluation, and ablation grids."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import autodiff as ad
from .graph import Graph, SbmConfig, Split, generate_sbm, make_split
from .katz import KatzFeatures, compute_katz
from .model import DgtModel, ModelConfig, forward
from .sequences import SequenceSet, build_sequences, parse_criteria

logger = logging.getLogger(__name__)

# hyperparameter search space; grid axes outside these values are rejected
LR_GRID = (0.05, 0.01, 0.005)
WD_GRID = (1e-3, 5e-4, 5e-5)
LAYER_GRID = (1, 2)
GAMMA_GRID = (1, 2, 4, 8, 16, 32, 64, 128, 256)


class NumericFailure(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 1000
    patience: int = 100
    seed: int = 0
    monitor: str = "accuracy"  # or "loss"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.monitor not in ("accuracy", "loss"):
            raise ValueError(f"unknown monitor {self.monitor!r}")


@dataclass
class RunResult:
    best_val_acc: float
    test_acc: float
    best_epoch: int
    epochs_run: int
    train_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc_trace: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_ms: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(logits: np.ndarray, labels: np.ndarray, ids) -> float:
    """Argmax accuracy over ``ids``; ties go to the lowest class id."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("accuracy over an empty id set")
    return float(np.mean(np.argmax(logits[ids], axis=1) == labels[ids]))


def evaluate(model: DgtModel, g: Graph, seqs, katz, ids) -> float:
    if g.labels is None:
        raise ValueError("evaluate needs labels")
    with ad.no_grad():
        logits = forward(model, g, seqs, katz).data
    return accuracy(logits, g.labels, ids)


def _nll(logits: np.ndarray, labels: np.ndarray, ids: np.ndarray) -> float:
    z = logits[ids] - logits[ids].max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(ids.size), labels[ids]].mean())


def train(model: DgtModel, g: Graph, seqs, katz, split: Split, cfg: TrainConfig) -> RunResult:
    """Adam on masked cross-entropy; restores the best-validation parameters."""
    if g.labels is None:
        raise ValueError("training needs labels")
    for name, ids in (("train", split.train_ids), ("val", split.val_ids), ("test", split.test_ids)):
        if len(ids) == 0:
            raise ValueError(f"{name} split is empty")
    seq = seqs.stacked() if hasattr(seqs, "stacked") else np.asarray(seqs)
    opt = ad.Adam(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    result = RunResult(best_val_acc=-1.0, test_acc=0.0, best_epoch=0, epochs_run=0)
    best_score, best_state, since_best = -np.inf, model.state(), 0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        opt.zero_grad()
        try:
            logits = forward(model, g, seq, katz, training=True, dropout_seed=cfg.seed * 1_000_003 + epoch)
        except FloatingPointError as exc:
            raise NumericFailure(f"epoch {epoch}: {exc}") from None
        loss = ad.cross_entropy_masked(logits, g.labels, split.train_ids)
        if not np.isfinite(loss.data):
            raise NumericFailure(f"non-finite training loss at epoch {epoch}")
        loss.backward()
        try:
            opt.step()
        except ad.NonFiniteGradient as exc:
            raise NumericFailure(f"epoch {epoch}: {exc}") from None

        with ad.no_grad():
            ev = forward(model, g, seq, katz).data
        val_acc = accuracy(ev, g.labels, split.val_ids)
        val_loss = _nll(ev, g.labels, split.val_ids)
        result.train_loss.append(float(loss.data))
        result.val_acc.append(val_acc)
        result.val_loss.append(val_loss)
        result.test_acc_trace.append(accuracy(ev, g.labels, split.test_ids))
        result.epoch_ms.append((time.perf_counter() - t0) * 1e3)
        result.epochs_run = epoch

        score = val_acc if cfg.monitor == "accuracy" else -val_loss
        if score > best_score:
            best_score, best_state, since_best = score, model.state(), 0
            result.best_epoch = epoch
            result.best_val_acc = val_acc
            result.test_acc = result.test_acc_trace[-1]
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.load_state(best_state)
    return result


# -- experiment plumbing -----------------------------------------------------


@dataclass
class Prepared:
    graph: Graph
    split: Split
    seqs: SequenceSet
    katz: KatzFeatures | None


def prepare(
    g: Graph,
    split: Split,
    criteria,
    seq_len: int,
    ordering: str,
    model_cfg: ModelConfig,
    seed: int,
) -> Prepared:
    seqs = build_sequences(g, parse_criteria(criteria), seq_len, ordering, seed=seed)
    katz = compute_katz(g, model_cfg.katz) if model_cfg.pe_mode == "katz" else None
    return Prepared(g, split, seqs, katz)


def build_model(cfg: ModelConfig, prep: Prepared) -> DgtModel:
    return DgtModel(
        cfg,
        prep.graph.feature_dim,
        prep.graph.num_classes,
        criteria_count=len(prep.seqs.criteria),
        seq_len=prep.seqs.seq_len,
        katz_dim=prep.katz.dim if prep.katz is not None else 0,
    )


def confidence_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half-width."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if v.size < 2:
        return mean, float("nan")
    sd = float(v.std(ddof=1))
    if sd == 0.0:
        return mean, 0.0
    t = stats.t.ppf(0.5 + level / 2, df=v.size - 1)
    return mean, float(t * sd / np.sqrt(v.size))


# variant shorthands: (ordering, criteria)
VARIANTS = {
    "AR": ("absolute", "random"),
    "AB": ("absolute", "bfs"),
    "AM": ("absolute", "bfs,ppr,feat"),
    "RB": ("relative", "bfs"),
    "RM": ("relative", "bfs,ppr,feat"),
}

AXES = ("variant", "ordering", "criteria", "epsilon", "gamma", "interp", "lr", "weight_decay", "layers", "pe_mode")


def _validate_axis(name: str, value):
    if name not in AXES:
        raise ValueError(f"unknown grid axis {name!r}; expected one of {AXES}")
    if name == "variant" and value not in VARIANTS:
        raise ValueError(f"unknown variant {value!r}")
    if name == "ordering" and value not in ("relative", "absolute"):
        raise ValueError(f"invalid ordering {value!r}")
    if name == "criteria":
        parse_criteria(value)
    if name == "interp" and value not in ("kernel", "bilinear"):
        raise ValueError(f"invalid interp {value!r}")
    if name in ("epsilon",) and float(value) < 1:
        raise ValueError("epsilon must be >= 1")
    grids = {"lr": LR_GRID, "weight_decay": WD_GRID, "layers": LAYER_GRID, "gamma": GAMMA_GRID}
    if name in grids and not any(np.isclose(float(value), g, rtol=1e-12, atol=0) for g in grids[name]):
        raise ValueError(f"{name}={value!r} is outside the search grid {grids[name]}")
    if name == "pe_mode" and value not in ("katz", "none"):
        raise ValueError(f"invalid pe_mode {value!r}")


@dataclass
class GridSpec:
    axes: dict
    repeats: int = 3
    seed: int = 0
    seq_len: int = 32
    criteria: str = "bfs,ppr,feat"
    ordering: str = "relative"
    data: dict | str = field(default_factory=dict)  # SbmConfig fields or a dataset dir
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "GridSpec":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if "axes" not in raw or "repeats" not in raw:
            raise ValueError("grid spec needs 'axes' and 'repeats'")
        return cls(**raw)

    def cells(self) -> list[dict]:
        for name, values in self.axes.items():
            if not isinstance(values, list) or not values:
                raise ValueError(f"axis {name!r} must be a non-empty list")
            for v in values:
                _validate_axis(name, v)
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


def _load_data(spec: GridSpec, repeat_seed: int):
    from .graph import load_graph, load_split

    if isinstance(spec.data, str):
        g = load_graph(spec.data)
        split = load_split(spec.data) or make_split(g, seed=repeat_seed)
    else:
        g = generate_sbm(SbmConfig(**{**spec.data, "seed": repeat_seed}))
        split = make_split(g, seed=repeat_seed)
    return g, split


def run_cell(spec: GridSpec, cell: dict, repeat: int, data_cache: dict | None = None) -> dict:
    seed = spec.seed + repeat
    ordering, criteria = spec.ordering, spec.criteria
    model_kw, train_kw = dict(spec.model), dict(spec.train)
    for name, value in cell.items():
        if name == "variant":
            ordering, criteria = VARIANTS[value]
        elif name == "ordering":
            ordering = value
        elif name == "criteria":
            criteria = value
        elif name in ("epsilon", "gamma", "interp", "layers", "pe_mode"):
            model_kw[name] = value
        else:
            train_kw[name] = value
    key = seed
    if data_cache is not None and key in data_cache:
        g, split = data_cache[key]
    else:
        g, split = _load_data(spec, seed)
        if data_cache is not None:
            data_cache[key] = (g, split)
    model_cfg = ModelConfig(**{**model_kw, "seed": seed})
    prep = prepare(g, split, criteria, spec.seq_len, ordering, model_cfg, seed)
    model = build_model(model_cfg, prep)
    t0 = time.perf_counter()
    res = train(model, g, prep.seqs, prep.katz, split, TrainConfig(**{**train_kw, "seed": seed}))
    return {
        "repeat": repeat,
        "seed": seed,
        "best_val_acc": res.best_val_acc,
        "test_acc": res.test_acc,
        "epochs": res.epochs_run,
        "wall_ms": round((time.perf_counter() - t0) * 1e3, 1),
    }


def run_ablation_grid(spec: GridSpec, out_dir=None, workers: int = 1) -> list[dict]:
    """Every cell x repeat; repeat ``r`` uses the same seed in every cell."""
    cells = spec.cells()
    jobs = [(ci, cell, r) for ci, cell in enumerate(cells) for r in range(spec.repeats)]
    rows = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_cell, spec, cell, r) for _, cell, r in jobs]
            outs = [f.result() for f in futs]
    else:
        cache: dict = {}
        outs = [run_cell(spec, cell, r, cache) for _, cell, r in jobs]
    for (ci, cell, _), out in zip(jobs, outs):
        rows.append({"cell_id": ci, **{k: cell[k] for k in cell}, **out})
    if out_dir is not None:
        write_results(rows, list(cells[0]) if cells else [], Path(out_dir))
    return rows


def summarize(rows: list[dict], axis_names: list[str]) -> list[dict]:
    out = []
    for cid in sorted({r["cell_id"] for r in rows}):
        sub = [r for r in rows if r["cell_id"] == cid]
        mean, half = confidence_interval([r["test_acc"] for r in sub])
        out.append({
            "cell_id": cid,
            **{a: sub[0][a] for a in axis_names},
            "n": len(sub),
            "test_mean": mean,
            "test_ci95": half,
        })
    return out


def format_table(summary: list[dict], axis_names: list[str]) -> str:
    head = ["cell"] + axis_names + ["n", "test acc (mean +- 95% CI)"]
    lines = [" | ".join(head)]
    for s in summary:
        vals = [str(s["cell_id"])] + [str(s[a]) for a in axis_names]
        vals += [str(s["n"]), f"{100 * s['test_mean']:.2f} +- {100 * s['test_ci95']:.2f}"]
        lines.append(" | ".join(vals))
    return "\n".join(lines)


def write_results(rows: list[dict], axis_names: list[str], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = ["cell_id", *axis_names, "repeat", "seed", "best_val_acc", "test_acc", "epochs", "wall_ms"]
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in cols})
    summary = summarize(rows, axis_names)
    (out_dir / "summary.txt").write_text(format_table(summary, axis_names) + "\n", encoding="utf-8")
