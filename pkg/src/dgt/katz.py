"""Truncated Katz-index features, optionally restricted to high-degree anchors."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph

KATZ_MAGIC = b"DGTKTZ1"


@dataclass
class KatzConfig:
    beta: float = 0.1
    max_power: int = 3
    # None -> all nodes when N <= 2048, else 512
    num_anchors: int | None = None

    def resolve_anchors(self, n: int) -> int:
        if self.num_anchors is None:
            return n if n <= 2048 else 512
        if not 1 <= self.num_anchors <= n:
            raise ValueError(f"num_anchors must lie in [1, {n}], got {self.num_anchors}")
        return self.num_anchors

    def validate(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.max_power < 1:
            raise ValueError("max_power must be >= 1")


@dataclass
class KatzFeatures:
    anchors: np.ndarray
    matrix: np.ndarray
    beta: float
    max_power: int

    @property
    def dim(self) -> int:
        return len(self.anchors)

    def same_as(self, other: "KatzFeatures") -> bool:
        return (
            np.array_equal(self.anchors, other.anchors)
            and np.array_equal(self.matrix, other.matrix)
            and self.beta == other.beta
            and self.max_power == other.max_power
        )


def select_anchors(g: Graph, count: int) -> np.ndarray:
    """Top-``count`` nodes by degree, ascending id on ties."""
    order = np.lexsort((np.arange(g.num_nodes), -g.degrees()))
    return np.sort(order[:count]) if count == g.num_nodes else order[:count]


def compute_katz(g: Graph, cfg: KatzConfig | None = None) -> KatzFeatures:
    """Columns ``sum_k beta^(k-1) A^k e_anchor`` via repeated sparse products."""
    cfg = cfg or KatzConfig()
    cfg.validate()
    n = g.num_nodes
    anchors = select_anchors(g, cfg.resolve_anchors(n))
    adj = g.adjacency()
    walk = np.zeros((n, len(anchors)))
    walk[anchors, np.arange(len(anchors))] = 1.0
    out = np.zeros_like(walk)
    coef = 1.0
    for _ in range(cfg.max_power):
        walk = adj @ walk
        out += coef * walk
        coef *= cfg.beta
    return KatzFeatures(anchors.astype(np.int64), out, cfg.beta, cfg.max_power)


def katz_symmetry_check(g: Graph, feats: KatzFeatures, atol: float = 1e-9) -> bool:
    if len(feats.anchors) != g.num_nodes or not np.array_equal(
        feats.anchors, np.arange(g.num_nodes)
    ):
        raise ValueError("symmetry check needs every node as an anchor")
    return bool(np.allclose(feats.matrix, feats.matrix.T, rtol=0.0, atol=atol))


def write_katz(feats: KatzFeatures, path) -> None:
    n, n_anchor = feats.matrix.shape
    with open(path, "wb") as fh:
        fh.write(KATZ_MAGIC)
        fh.write(struct.pack("<qqdq", n, n_anchor, feats.beta, feats.max_power))
        fh.write(np.ascontiguousarray(feats.anchors, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(feats.matrix, dtype="<f8").tobytes())


def read_katz(path) -> KatzFeatures:
    raw = Path(path).read_bytes()
    if raw[:7] != KATZ_MAGIC:
        raise ValueError(f"{path}: not a Katz feature file")
    n, n_anchor, beta, power = struct.unpack_from("<qqdq", raw, 7)
    off = 7 + 32
    anchors = np.frombuffer(raw, dtype="<i8", count=n_anchor, offset=off).astype(np.int64)
    off += 8 * n_anchor
    if len(raw) != off + 8 * n * n_anchor:
        raise ValueError(f"{path}: truncated matrix")
    matrix = np.frombuffer(raw, dtype="<f8", count=n * n_anchor, offset=off).reshape(n, n_anchor).copy()
    return KatzFeatures(anchors, matrix, beta, power)
