"""Immutable graph store, TSV ingestion, SBM generation and graph statistics."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class GraphDataError(ValueError):
    """Raised for malformed or inconsistent graph input."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form; every edge is stored in both directions.

    ``indptr``/``indices`` follow the scipy CSR convention and neighbor lists
    are sorted ascending, which the BFS tie-break relies on.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int = 0

    def __post_init__(self):
        n = len(self.indptr) - 1
        if n < 0:
            raise GraphDataError("indptr must have at least one entry")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise GraphDataError(
                f"features must be {n} x F, got shape {self.features.shape}"
            )
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise GraphDataError("edge endpoint out of range")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise GraphDataError(f"labels must have length {n}")
            if self.labels.size and (
                self.labels.min() < 0 or self.labels.max() >= self.num_classes
            ):
                raise GraphDataError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "indptr", _freeze(self.indptr.astype(np.int64)))
        object.__setattr__(self, "indices", _freeze(self.indices.astype(np.int64)))
        object.__setattr__(self, "features", _freeze(self.features.astype(np.float64)))
        if self.labels is not None:
            object.__setattr__(self, "labels", _freeze(self.labels.astype(np.int64)))

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_arcs(self) -> int:
        return len(self.indices)

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with ``i < j``, sorted."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def same_as(self, other: "Graph") -> bool:
        if (self.labels is None) != (other.labels is None):
            return False
        return (
            np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.features, other.features)
            and (self.labels is None or np.array_equal(self.labels, other.labels))
            and self.num_classes == other.num_classes
        )


def from_edges(
    num_nodes: int,
    edges,
    features: np.ndarray,
    labels=None,
    num_classes: int | None = None,
) -> Graph:
    """Build a Graph from an arbitrary edge list.

    Edges are symmetrized and deduplicated; self-loops are dropped with a warning.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise GraphDataError(f"edge endpoint out of range [0, {num_nodes})")
    loops = e[:, 0] == e[:, 1]
    if loops.any():
        logger.warning("stripping %d self-loop(s)", int(loops.sum()))
        e = e[~loops]
    both = np.concatenate([e, e[:, ::-1]], axis=0)
    adj = sp.csr_matrix(
        (np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(num_nodes, num_nodes)
    )
    adj.sum_duplicates()
    adj.sort_indices()
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 0
    return Graph(
        indptr=adj.indptr.astype(np.int64),
        indices=adj.indices.astype(np.int64),
        features=np.asarray(features, dtype=np.float64),
        labels=labels,
        num_classes=num_classes or 0,
    )


# -- file I/O ---------------------------------------------------------------


def _read_rows(path: Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().split("\n") if line.strip()]


def load_graph(dir_path) -> Graph:
    """Load ``edges.tsv``, ``features.tsv`` and optional ``labels.tsv``."""
    d = Path(dir_path)
    for name in ("edges.tsv", "features.tsv"):
        if not (d / name).is_file():
            raise GraphDataError(f"missing file: {d / name}")

    feat_rows = _read_rows(d / "features.tsv")
    if not feat_rows:
        raise GraphDataError("features.tsv is empty")
    width = len(feat_rows[0])
    for lineno, row in enumerate(feat_rows, 1):
        if len(row) != width:
            raise GraphDataError(
                f"features.tsv line {lineno}: expected {width} values, got {len(row)}"
            )
    try:
        features = np.array(feat_rows, dtype=np.float64)
    except ValueError as exc:
        raise GraphDataError(f"features.tsv: {exc}") from None
    n = features.shape[0]

    edges = []
    for lineno, row in enumerate(_read_rows(d / "edges.tsv"), 1):
        if len(row) != 2 or not all(tok.isdigit() for tok in row):
            raise GraphDataError(f"edges.tsv line {lineno}: malformed row {row!r}")
        i, j = int(row[0]), int(row[1])
        if i >= n or j >= n:
            raise GraphDataError(
                f"edges.tsv line {lineno}: node id out of range for {n} nodes"
            )
        edges.append((i, j))

    labels = None
    if (d / "labels.tsv").is_file():
        rows = _read_rows(d / "labels.tsv")
        if len(rows) != n or any(len(r) != 1 or not r[0].isdigit() for r in rows):
            raise GraphDataError(f"labels.tsv must hold {n} non-negative integers")
        labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    return from_edges(n, edges, features, labels)


def load_split(dir_path) -> "Split | None":
    path = Path(dir_path) / "splits.json"
    if not path.is_file():
        return None
    raw = json.loads(path.read_text(encoding="utf-8"))
    try:
        return Split(
            np.asarray(raw["train"], dtype=np.int64),
            np.asarray(raw["val"], dtype=np.int64),
            np.asarray(raw["test"], dtype=np.int64),
        )
    except KeyError as exc:
        raise GraphDataError(f"splits.json missing key {exc}") from None


def write_graph(g: Graph, dir_path, split: "Split | None" = None) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for i, j in g.edge_list():
            fh.write(f"{i}\t{j}\n")
    with open(d / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for row in g.features:
            # repr round-trips float64 exactly
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    if g.labels is not None:
        with open(d / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{int(y)}\n" for y in g.labels)
    if split is not None:
        (d / "splits.json").write_text(json.dumps(split.to_dict()), encoding="utf-8")


# -- splits -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Split:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        sets = [set(a.tolist()) for a in (self.train_ids, self.val_ids, self.test_ids)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise GraphDataError("split sets must be pairwise disjoint")

    def to_dict(self) -> dict:
        return {
            "train": self.train_ids.tolist(),
            "val": self.val_ids.tolist(),
            "test": self.test_ids.tolist(),
        }


def make_split(g: Graph, ratios=(0.48, 0.32, 0.20), seed: int = 0) -> Split:
    """Per-class stratified train/val/test split."""
    if g.labels is None:
        raise GraphDataError("make_split requires labels")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) > 1 + 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to <= 1: {ratios}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in range(g.num_classes):
        members = np.flatnonzero(g.labels == c)
        if members.size == 0:
            continue
        if members.size < 3:
            raise GraphDataError(f"class {c} has only {members.size} node(s); need >= 3")
        members = rng.permutation(members)
        n = members.size
        n_train = max(1, int(round(ratios[0] * n)))
        n_val = max(1, int(round(ratios[1] * n)))
        if abs(sum(ratios) - 1.0) < 1e-9:
            n_test = n - n_train - n_val
        else:
            n_test = int(round(ratios[2] * n))
        if n_test < 1:
            n_train -= 1
            n_test = 1
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train : n_train + n_val])
        parts[2].append(members[n_train + n_val : n_train + n_val + n_test])
    return Split(*(np.sort(np.concatenate(p)) for p in parts))


# -- statistics -------------------------------------------------------------


def homophily_ratio(g: Graph) -> float:
    """Fraction of undirected edges whose endpoints share a label."""
    if g.labels is None:
        raise GraphDataError("homophily_ratio requires labels")
    e = g.edge_list()
    if len(e) == 0:
        return 0.0
    return float(np.mean(g.labels[e[:, 0]] == g.labels[e[:, 1]]))


# -- synthetic graphs -------------------------------------------------------


@dataclass
class SbmConfig:
    num_nodes: int = 200
    num_classes: int = 2
    intra_edge_prob: float = 0.1
    inter_edge_prob: float = 0.01
    feature_dim: int = 16
    feature_signal: float = 1.0
    seed: int = 0

    def validate(self):
        if self.num_nodes <= 0:
            raise ValueError("num_nodes must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        for name in ("intra_edge_prob", "inter_edge_prob", "feature_signal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


def generate_sbm(cfg: SbmConfig) -> Graph:
    """Planted-partition graph with class-correlated Gaussian features."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.num_nodes, cfg.num_classes
    labels = rng.permutation(np.arange(n) % c)

    rows, cols = [], []
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        prob = np.where(labels[j] == labels[i], cfg.intra_edge_prob, cfg.inter_edge_prob)
        hit = j[rng.random(j.size) < prob]
        rows.append(np.full(hit.size, i))
        cols.append(hit)
    edges = (
        np.stack([np.concatenate(rows), np.concatenate(cols)], axis=1)
        if rows
        else np.zeros((0, 2), dtype=np.int64)
    )

    means = rng.normal(size=(c, cfg.feature_dim))
    features = cfg.feature_signal * means[labels] + rng.normal(size=(n, cfg.feature_dim))
    return from_edges(n, edges, features, labels, num_classes=c)
