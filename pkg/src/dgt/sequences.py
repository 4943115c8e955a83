"""Per-base-node sorted node sequences (BFS, PPR, feature similarity).

Relative mode gives every base node its own ordering with the base node at
index 0. Absolute mode computes one global ordering and repeats it for every
row, which is the ablation baseline.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph


class Criterion(str, Enum):
    BFS = "bfs"
    PPR = "ppr"
    FEATURE_SIM = "feat"
    RANDOM_ABSOLUTE = "random"


_TAGS = {Criterion.BFS: b"B", Criterion.PPR: b"P", Criterion.FEATURE_SIM: b"F", Criterion.RANDOM_ABSOLUTE: b"R"}
_FROM_TAG = {v: k for k, v in _TAGS.items()}
SEQ_MAGIC = b"DGTSEQ1"


@dataclass(frozen=True)
class PprParams:
    teleport: float = 0.15
    tol: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if not 0.0 < self.teleport < 1.0:
            raise ValueError("teleport must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def parse_criteria(spec) -> list[Criterion]:
    if isinstance(spec, str):
        spec = [s for s in spec.replace("+", ",").split(",") if s]
    out = [Criterion(s) for s in spec]
    if not out:
        raise ValueError("criteria set is empty")
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate criteria in {spec}")
    return out


@dataclass
class SequenceSet:
    seq_len: int
    ordering_mode: str
    criteria: list[Criterion]
    sequences: dict[Criterion, np.ndarray] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return next(iter(self.sequences.values())).shape[0]

    def stacked(self) -> np.ndarray:
        """(T, N, S) array in criterion order."""
        return np.stack([self.sequences[c] for c in self.criteria])

    def same_as(self, other: "SequenceSet") -> bool:
        return (
            self.seq_len == other.seq_len
            and self.ordering_mode == other.ordering_mode
            and self.criteria == other.criteria
            and all(np.array_equal(self.sequences[c], other.sequences[c]) for c in self.criteria)
        )


# -- single-base orderings --------------------------------------------------


def bfs_order(g: Graph, base: int, limit: int) -> np.ndarray:
    """BFS visitation from ``base`` with ascending-id expansion, padded to ``limit``."""
    n = g.num_nodes
    if not 0 <= base < n:
        raise IndexError(f"base node {base} out of range")
    limit = min(limit, n)
    seen = np.zeros(n, dtype=bool)
    seen[base] = True
    order = [base]
    queue = deque([base])
    while queue and len(order) < limit:
        u = queue.popleft()
        for v in g.neighbors(u):
            if not seen[v]:
                seen[v] = True
                order.append(int(v))
                queue.append(v)
                if len(order) == limit:
                    break
    if len(order) < limit:
        order.extend(np.flatnonzero(~seen)[: limit - len(order)].tolist())
    return np.asarray(order, dtype=np.int64)


def _transition(g: Graph):
    """Column-stochastic random-walk operator A D^-1 and the dangling mask."""
    deg = g.degrees().astype(np.float64)
    dangling = deg == 0
    inv = np.where(dangling, 0.0, 1.0 / np.maximum(deg, 1.0))
    return g.adjacency() @ sp.diags(inv), dangling


def _ppr_block(g: Graph, bases: np.ndarray, params: PprParams) -> np.ndarray:
    """Power iteration for several bases at once; returns (N, len(bases)).

    Each column stops updating once its own L1 change drops below ``tol`` so a
    column's result does not depend on which other bases share the block.
    Mass on dangling nodes returns to the column's base node.
    """
    n = g.num_nodes
    alpha = params.teleport
    trans, dangling = _transition(g)
    cols = np.arange(len(bases))
    tele = np.zeros((n, len(bases)))
    tele[bases, cols] = 1.0
    p = tele.copy()
    active = np.ones(len(bases), dtype=bool)
    for _ in range(params.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = p[:, idx]
        walk = trans @ cur
        lost = cur[dangling].sum(axis=0)
        walk[bases[idx], np.arange(idx.size)] += lost
        new = (1.0 - alpha) * walk + alpha * tele[:, idx]
        change = np.abs(new - cur).sum(axis=0)
        p[:, idx] = new
        active[idx[change < params.tol]] = False
    return p


def ppr_scores(
    g: Graph, base: int, teleport: float = 0.15, tol: float = 1e-6, max_iter: int = 100
) -> np.ndarray:
    """Personalized PageRank vector for ``base`` by power iteration."""
    if not 0 <= base < g.num_nodes:
        raise IndexError(f"base node {base} out of range")
    params = PprParams(teleport, tol, max_iter)
    return _ppr_block(g, np.array([base]), params)[:, 0]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def feature_similarity_order(g: Graph, base: int, limit: int | None = None) -> np.ndarray:
    """Nodes by descending cosine similarity to ``x_base`` (ties: ascending id).

    The base node itself is excluded; callers prepend it.
    """
    unit = _unit_rows(g.features)
    sim = unit @ unit[base]
    order = _rank_desc(sim[None, :])[0]
    order = order[order != base]
    return order if limit is None else order[:limit]


def _rank_desc(scores: np.ndarray, decimals: int = 12) -> np.ndarray:
    # rounding makes near-equal floats tie so the stable sort falls back to id order
    return np.argsort(-np.round(scores, decimals), axis=1, kind="stable")


# -- sequence sets ----------------------------------------------------------


def _relative_from_scores(scores: np.ndarray, bases: np.ndarray, seq_len: int) -> np.ndarray:
    """Rows: base first, then the top ``seq_len - 1`` other nodes by score."""
    order = _rank_desc(scores)
    out = np.empty((len(bases), seq_len), dtype=np.int64)
    out[:, 0] = bases
    for r, b in enumerate(bases):
        row = order[r]
        out[r, 1:] = row[row != b][: seq_len - 1]
    return out


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))


def _relative(g: Graph, crit: Criterion, seq_len: int, ppr: PprParams) -> np.ndarray:
    n = g.num_nodes
    if crit is Criterion.BFS:
        return np.stack([bfs_order(g, q, seq_len) for q in range(n)])
    rows = []
    if crit is Criterion.PPR:
        for bases in _chunks(n, 256):
            scores = _ppr_block(g, bases, ppr).T
            rows.append(_relative_from_scores(scores, bases, seq_len))
    elif crit is Criterion.FEATURE_SIM:
        unit = _unit_rows(g.features)
        for bases in _chunks(n, 256):
            rows.append(_relative_from_scores(unit[bases] @ unit.T, bases, seq_len))
    else:
        raise ValueError(f"criterion {crit.value} is only defined in absolute mode")
    return np.concatenate(rows)


def _global_pagerank(g: Graph, ppr: PprParams) -> np.ndarray:
    n = g.num_nodes
    alpha = ppr.teleport
    trans, dangling = _transition(g)
    p = np.full(n, 1.0 / n)
    for _ in range(ppr.max_iter):
        new = (1.0 - alpha) * (trans @ p + p[dangling].sum() / n) + alpha / n
        done = np.abs(new - p).sum() < ppr.tol
        p = new
        if done:
            break
    return p


def _absolute(g: Graph, crit: Criterion, seq_len: int, ppr: PprParams, seed: int) -> np.ndarray:
    n = g.num_nodes
    if crit is Criterion.BFS:
        # fixed seed node: highest degree, lowest id on ties
        order = bfs_order(g, int(np.argmax(g.degrees())), seq_len)
    elif crit is Criterion.PPR:
        order = _rank_desc(_global_pagerank(g, ppr)[None, :])[0][:seq_len]
    elif crit is Criterion.FEATURE_SIM:
        unit = _unit_rows(g.features)
        mean = g.features.mean(axis=0)
        norm = np.linalg.norm(mean)
        sim = unit @ (mean / norm) if norm > 0 else np.zeros(n)
        order = _rank_desc(sim[None, :])[0][:seq_len]
    else:
        order = np.random.default_rng(seed).permutation(n)[:seq_len]
    return np.broadcast_to(order, (n, seq_len)).copy()


def build_sequences(
    g: Graph,
    criteria,
    seq_len: int = 32,
    mode: str = "relative",
    seed: int = 0,
    ppr: PprParams | None = None,
) -> SequenceSet:
    criteria = parse_criteria(criteria)
    ppr = ppr or PprParams()
    if seq_len < 2:
        raise ValueError("seq_len must be >= 2")
    if seq_len > g.num_nodes:
        raise ValueError(f"seq_len {seq_len} exceeds node count {g.num_nodes}")
    if mode not in ("relative", "absolute"):
        raise ValueError(f"unknown ordering mode {mode!r}")
    out = SequenceSet(seq_len, mode, criteria)
    for crit in criteria:
        if mode == "relative":
            out.sequences[crit] = _relative(g, crit, seq_len, ppr)
        else:
            out.sequences[crit] = _absolute(g, crit, seq_len, ppr, seed)
    return out


# -- binary format ----------------------------------------------------------


def write_sequences(seqs: SequenceSet, path) -> None:
    """Header: magic, N, S, T (uint32 LE), T criterion tag bytes, mode byte."""
    n = seqs.num_nodes
    with open(path, "wb") as fh:
        fh.write(SEQ_MAGIC)
        fh.write(struct.pack("<III", n, seqs.seq_len, len(seqs.criteria)))
        fh.write(b"".join(_TAGS[c] for c in seqs.criteria))
        fh.write(b"R" if seqs.ordering_mode == "relative" else b"A")
        for c in seqs.criteria:
            fh.write(np.ascontiguousarray(seqs.sequences[c], dtype="<u4").tobytes())


def read_sequences(path) -> SequenceSet:
    raw = Path(path).read_bytes()
    if raw[:7] != SEQ_MAGIC:
        raise ValueError(f"{path}: not a sequence file")
    n, s, t = struct.unpack_from("<III", raw, 7)
    off = 19
    criteria = [_FROM_TAG[raw[off + i : off + i + 1]] for i in range(t)]
    mode = "relative" if raw[off + t : off + t + 1] == b"R" else "absolute"
    off += t + 1
    expected = off + t * n * s * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != expected {expected}")
    out = SequenceSet(s, mode, criteria)
    for c in criteria:
        out.sequences[c] = np.frombuffer(raw, dtype="<u4", count=n * s, offset=off).reshape(n, s).astype(np.int64)
        off += n * s * 4
    return out
