"""Deformable graph attention with truncated-RBF (or bilinear) interpolation.

Each query predicts, per criterion, head and key, a fractional position in its
own node sequence plus an attention weight. Values are read at those
positions by interpolating over nearby sequence slots, so a query touches a
bounded number of rows regardless of N.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class DgaConfig:
    heads: int = 4
    keys: int = 4
    criteria_count: int = 1
    hidden: int = 64
    gamma: float = 4.0
    epsilon: float = 4.0
    interp: str = "kernel"
    normalize_kernel: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} must be a multiple of heads {self.heads}")
        if self.keys < 1 or self.criteria_count < 1:
            raise ValueError("keys and criteria_count must be >= 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.epsilon < 1:
            raise ValueError("epsilon must be >= 1")
        if self.interp not in ("kernel", "bilinear"):
            raise ValueError(f"unknown interpolation {self.interp!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def support(self) -> int:
        """Max number of sequence slots one sampling point can touch."""
        return 2 if self.interp == "bilinear" else math.ceil(2 * self.epsilon)


def kernel_weight(a: float, b: int, gamma: float, epsilon: float) -> float:
    d = a - b
    return math.exp(-d * d / gamma) if abs(d) < epsilon else 0.0


def _window(p: np.ndarray, cfg: DgaConfig) -> np.ndarray:
    """Candidate integer slots around each position; shape ``p.shape + (W,)``."""
    base = np.floor(p).astype(np.int64)[..., None]
    if cfg.interp == "bilinear":
        return base + np.arange(2)
    r = math.ceil(cfg.epsilon)
    return base + np.arange(-r + 1, r + 1)


def _slot_weights(p: Tensor, cand: np.ndarray, seq_len: int, cfg: DgaConfig) -> Tensor:
    """Interpolation weight of every candidate slot, differentiable in ``p``."""
    diff = p.data[..., None] - cand
    inside = (cand >= 0) & (cand < seq_len)
    if cfg.interp == "kernel":
        valid = inside & (np.abs(diff) < cfg.epsilon)
        w = np.where(valid, np.exp(-diff * diff / cfg.gamma), 0.0)
        dw = w * (-2.0 * diff / cfg.gamma)
    else:
        valid = inside & (np.abs(diff) < 1.0)
        w = np.where(valid, 1.0 - np.abs(diff), 0.0)
        dw = np.where(valid, -np.sign(diff), 0.0)
    if cfg.normalize_kernel:
        s = w.sum(axis=-1, keepdims=True)
        ds = dw.sum(axis=-1, keepdims=True)
        s_safe = np.where(s > 0, s, 1.0)
        dw = (dw * s - w * ds) / (s_safe * s_safe)
        w = w / s_safe

    def backward(g):
        p._accum((g * dw).sum(axis=-1))

    return ad._make(w, (p,), backward)


def interpolate(seq_row, node_values: Tensor, p, cfg: DgaConfig) -> Tensor:
    """Value at fractional position ``p`` of one sequence (length c_v vector).

    Kernel mode is the unnormalized sum of ``g(p, i) * value(seq_row[i])``
    unless ``cfg.normalize_kernel`` is set.
    """
    seq_row = np.asarray(seq_row, dtype=np.int64)
    p = p if isinstance(p, Tensor) else Tensor(float(p))
    s = len(seq_row)
    if not 0.0 <= float(p.data) <= s - 1:
        raise ValueError(f"position {float(p.data)} outside [0, {s - 1}]")
    cand = _window(p.data, cfg)
    w = _slot_weights(p, cand, s, cfg)
    rows = seq_row[np.clip(cand, 0, s - 1)]
    return ad.weighted_gather(node_values, rows, w)


@dataclass
class DgaParams:
    off_w: Tensor
    off_b: Tensor
    att_w: Tensor
    att_b: Tensor
    val_w: list[Tensor]
    out_w: list[Tensor]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {
            f"{prefix}off_w": self.off_w,
            f"{prefix}off_b": self.off_b,
            f"{prefix}att_w": self.att_w,
            f"{prefix}att_b": self.att_b,
        }
        for t, (v, o) in enumerate(zip(self.val_w, self.out_w)):
            out[f"{prefix}val_w.{t}"] = v
            out[f"{prefix}out_w.{t}"] = o
        return out


def _uniform(rng, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_dga_params(cfg: DgaConfig, seq_len: int, rng: np.random.Generator) -> DgaParams:
    """Zero offset/attention weights; offset biases spread the keys evenly over the sequence."""
    t, m, k, c = cfg.criteria_count, cfg.heads, cfg.keys, cfg.hidden
    frac = (np.arange(k) + 0.5) / k
    bias = np.broadcast_to(np.log(frac / (1.0 - frac)), (t, m, k)).reshape(-1)
    return DgaParams(
        off_w=Tensor(np.zeros((c, t * m * k)), requires_grad=True),
        off_b=Tensor(bias.copy(), requires_grad=True),
        att_w=Tensor(np.zeros((c, t * m * k)), requires_grad=True),
        att_b=Tensor(np.zeros(t * m * k), requires_grad=True),
        val_w=[_uniform(rng, c, (c, m * cfg.head_dim)) for _ in range(t)],
        out_w=[_uniform(rng, m * cfg.head_dim, (m * cfg.head_dim, c)) for _ in range(t)],
    )


@dataclass
class DgaRecord:
    """Per-forward state kept for explanation and instrumentation."""

    seqs: np.ndarray  # (T, N, S)
    offsets: np.ndarray  # (N, T, M, K)
    attention: np.ndarray  # (N, T, M, K)
    cand: list[np.ndarray] = field(default_factory=list)  # per T: (N, M, K, W)
    weights: list[np.ndarray] = field(default_factory=list)  # per T: (N, M, K, W)
    rows_read: np.ndarray | None = None  # distinct value rows touched per query


def _as_seq_array(seqs) -> np.ndarray:
    if hasattr(seqs, "stacked"):
        return seqs.stacked()
    arr = np.asarray(seqs, dtype=np.int64)
    return arr[None] if arr.ndim == 2 else arr


def dga_forward(z: Tensor, seqs, values_in: Tensor, params: DgaParams, cfg: DgaConfig, record: DgaRecord | None = None) -> Tensor:
    seq = _as_seq_array(seqs)
    t_count, n, s = seq.shape
    m, k, cv = cfg.heads, cfg.keys, cfg.head_dim
    if t_count != cfg.criteria_count:
        raise ValueError(f"{t_count} sequence criteria but config expects {cfg.criteria_count}")
    if z.shape != (n, cfg.hidden) or values_in.shape != (n, cfg.hidden):
        raise ValueError(f"z/values must be ({n}, {cfg.hidden}); got {z.shape}, {values_in.shape}")

    offsets = ad.reshape(ad.mul(ad.sigmoid(z @ params.off_w + params.off_b), float(s - 1)), (n, t_count, m, k))
    if np.isnan(offsets.data).any():
        raise FloatingPointError("NaN in sampling offsets")
    attn = ad.softmax(ad.reshape(z @ params.att_w + params.att_b, (n, t_count, m, k)))

    if record is not None:
        record.seqs = seq
        record.offsets = offsets.data.copy()
        record.attention = attn.data.copy()
        record.cand, record.weights = [], []
        rows_read = np.zeros(n, dtype=np.int64)

    qi = np.arange(n)[:, None, None, None]
    head = np.arange(m)[None, :, None, None]
    out = None
    for t in range(t_count):
        p = offsets[:, t]
        cand = _window(p.data, cfg)
        w = _slot_weights(p, cand, s, cfg)
        coef = ad.mul(w, ad.reshape(attn[:, t], (n, m, k, 1)))
        nodes = seq[t][qi, np.clip(cand, 0, s - 1)]
        rows = nodes * m + head
        width = rows.shape[-1]
        v = ad.reshape(values_in @ params.val_w[t], (n * m, cv))
        heads = ad.weighted_gather(
            v, rows.reshape(n, m, k * width), ad.reshape(coef, (n, m, k * width))
        )
        o = ad.reshape(heads, (n, m * cv)) @ params.out_w[t]
        out = o if out is None else out + o
        if record is not None:
            record.cand.append(cand)
            record.weights.append(w.data.copy())
            touched = np.where(w.data != 0, rows, -1).reshape(n, -1)
            rows_read += np.array([np.unique(r[r >= 0]).size for r in touched])
    if record is not None:
        record.rows_read = rows_read
    return out


def attention_scores(q: int, record: DgaRecord, num_nodes: int) -> np.ndarray:
    """Per-node importance ``w_i = sum A * g(offset, slot)`` for query ``q``.

    Summed over criteria, heads and keys; slot indices map to node ids through
    the query's sequences. Nodes never sampled score 0.
    """
    if not 0 <= q < num_nodes:
        raise IndexError(f"query {q} out of range")
    scores = np.zeros(num_nodes)
    for t, (cand, w) in enumerate(zip(record.cand, record.weights)):
        s = record.seqs.shape[2]
        nodes = record.seqs[t][q][np.clip(cand[q], 0, s - 1)]
        contrib = record.attention[q, t][..., None] * w[q]
        np.add.at(scores, nodes.reshape(-1), contrib.reshape(-1))
    return scores
