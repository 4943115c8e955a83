"""DGT block stack, the full-attention baseline and closed-form FLOP counts."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dga import DgaConfig, DgaParams, DgaRecord, dga_forward, init_dga_params
from .katz import KatzConfig, KatzFeatures


@dataclass
class ModelConfig:
    hidden: int = 64
    layers: int = 1
    heads: int = 4
    keys: int = 4
    gamma: float = 4.0
    epsilon: float = 4.0
    interp: str = "kernel"
    normalize_kernel: bool = False
    katz: KatzConfig = field(default_factory=KatzConfig)
    pe_mode: str = "katz"  # "katz" | "none"
    dropout: float = 0.0
    use_layer_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.katz, dict):
            self.katz = KatzConfig(**self.katz)
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.pe_mode not in ("katz", "none"):
            raise ValueError(f"unknown pe_mode {self.pe_mode!r}")

    def dga(self, criteria_count: int) -> DgaConfig:
        return DgaConfig(
            heads=self.heads,
            keys=self.keys,
            criteria_count=criteria_count,
            hidden=self.hidden,
            gamma=self.gamma,
            epsilon=self.epsilon,
            interp=self.interp,
            normalize_kernel=self.normalize_kernel,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _linear(rng, fan_in, fan_out, name, params):
    bound = 1.0 / math.sqrt(fan_in)
    params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)


def _apply(params, name, x):
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


class _Stack:
    """Shared encoder / feed-forward / classifier skeleton."""

    def __init__(self, cfg: ModelConfig, feature_dim: int, num_classes: int, katz_dim: int):
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.katz_dim = katz_dim
        self.params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(cfg.seed)
        c = cfg.hidden
        _linear(self.rng, feature_dim, c, "encoder", self.params)
        if cfg.pe_mode == "katz":
            _linear(self.rng, katz_dim, c, "katz1", self.params)
            _linear(self.rng, c, c, "katz2", self.params)
        for layer in range(cfg.layers):
            self._init_attention(layer)
            _linear(self.rng, c, c, f"l{layer}.ffn1", self.params)
            _linear(self.rng, c, c, f"l{layer}.ffn2", self.params)
            if cfg.use_layer_norm:
                for site in ("ln_att", "ln_ffn"):
                    self.params[f"l{layer}.{site}.g"] = Tensor(np.ones(c), requires_grad=True)
                    self.params[f"l{layer}.{site}.b"] = Tensor(np.zeros(c), requires_grad=True)
        _linear(self.rng, c, num_classes, "classifier", self.params)

    def _init_attention(self, layer: int):
        raise NotImplementedError

    def _attention(self, layer: int, z: Tensor, ctx, record) -> Tensor:
        raise NotImplementedError

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def load_state(self, arrays: dict[str, np.ndarray]):
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)[:5]}")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def _norm(self, layer, site, x):
        if not self.cfg.use_layer_norm:
            return x
        p = self.params
        return ad.layer_norm(x) * p[f"l{layer}.{site}.g"] + p[f"l{layer}.{site}.b"]

    def embed(self, features: np.ndarray, katz: KatzFeatures | None) -> Tensor:
        z = _apply(self.params, "encoder", Tensor(features))
        if self.cfg.pe_mode == "katz":
            if katz is None:
                raise ValueError("pe_mode='katz' needs Katz features")
            if katz.matrix.shape[1] != self.katz_dim:
                raise ValueError(
                    f"Katz features have {katz.matrix.shape[1]} anchors, model expects {self.katz_dim}"
                )
            h = ad.relu(_apply(self.params, "katz1", Tensor(katz.matrix)))
            z = z + _apply(self.params, "katz2", h)
        return z

    def run(self, features, katz, ctx, training=False, dropout_seed=None, records=None) -> Tensor:
        rate = self.cfg.dropout
        seed = None if dropout_seed is None else int(dropout_seed)

        def drop(x, site):
            return ad.dropout(x, rate, None if seed is None else (seed, site), training)

        z = drop(self.embed(features, katz), 0)
        for layer in range(self.cfg.layers):
            rec = records[layer] if records is not None else None
            zin = self._norm(layer, "ln_att", z)
            zhat = self._attention(layer, zin, ctx, rec) + z
            h = ad.relu(_apply(self.params, f"l{layer}.ffn1", self._norm(layer, "ln_ffn", zhat)))
            h = drop(h, 1 + layer)
            z = _apply(self.params, f"l{layer}.ffn2", h) + zhat
        return _apply(self.params, "classifier", z)


class DgtModel(_Stack):
    def __init__(self, cfg: ModelConfig, feature_dim: int, num_classes: int, criteria_count: int, seq_len: int, katz_dim: int = 0):
        self.dga_cfg = cfg.dga(criteria_count)
        self.seq_len = seq_len
        self.dga_params: list[DgaParams] = []
        super().__init__(cfg, feature_dim, num_classes, katz_dim)

    def _init_attention(self, layer):
        p = init_dga_params(self.dga_cfg, self.seq_len, self.rng)
        self.dga_params.append(p)
        self.params.update(p.named(f"l{layer}.dga."))

    def _attention(self, layer, z, seqs, record):
        return dga_forward(z, seqs, z, self.dga_params[layer], self.dga_cfg, record)


def forward(model: DgtModel, g, seqs, katz_feats, training=False, dropout_seed=None, records=None) -> Tensor:
    """Logits (N x C). ``records``, if given, is a list with one DgaRecord per layer."""
    seq = seqs.stacked() if hasattr(seqs, "stacked") else np.asarray(seqs)
    if seq.shape[1] != g.num_nodes:
        raise ValueError("sequences were built for a different graph")
    return model.run(g.features, katz_feats, seq, training, dropout_seed, records)


def new_records(model: DgtModel) -> list[DgaRecord]:
    return [DgaRecord(np.empty(0), np.empty(0), np.empty(0)) for _ in range(model.cfg.layers)]


# -- full multi-head attention baseline --------------------------------------


class MemoryCeilingExceeded(MemoryError):
    pass


def mha_attention(z: Tensor, f: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, heads: int, probs_out: list | None = None) -> Tensor:
    """All-pairs multi-head attention of queries ``z`` over keys/values ``f``."""
    n, c = z.shape
    cv = c // heads
    q, k, v = z @ wq, f @ wk, f @ wv
    outs = []
    for m in range(heads):
        cols = slice(m * cv, (m + 1) * cv)
        qm, km, vm = q[:, cols], k[:, cols], v[:, cols]
        scores = ad.mul(qm @ ad.transpose(km), 1.0 / math.sqrt(cv))
        a = ad.softmax(scores)
        if probs_out is not None:
            probs_out.append(a.data)
        outs.append(a @ vm)
    return ad.concat(outs, axis=1) @ wo


class FullMhaModel(_Stack):
    """Same skeleton as DGT with every node attending to every node."""

    def __init__(self, cfg: ModelConfig, feature_dim: int, num_classes: int, katz_dim: int = 0, max_nodes: int = 8192):
        self.max_nodes = max_nodes
        super().__init__(cfg, feature_dim, num_classes, katz_dim)

    def _init_attention(self, layer):
        c = self.cfg.hidden
        for name in ("q", "k", "v", "o"):
            bound = 1.0 / math.sqrt(c)
            self.params[f"l{layer}.mha.{name}"] = Tensor(self.rng.uniform(-bound, bound, (c, c)), requires_grad=True)

    def _attention(self, layer, z, ctx, record):
        p = self.params
        w = [p[f"l{layer}.mha.{k}"] for k in ("q", "k", "v", "o")]
        return mha_attention(z, z, *w, self.cfg.heads, probs_out=record)


def full_mha_forward(model: FullMhaModel, g, katz_feats=None, probs: list | None = None) -> Tensor:
    if g.num_nodes > model.max_nodes:
        raise MemoryCeilingExceeded(
            f"full attention over {g.num_nodes} nodes exceeds the ceiling of {model.max_nodes}"
        )
    records = [probs] * model.cfg.layers if probs is not None else None
    return model.run(g.features, katz_feats, None, records=records)


# -- FLOP estimates -----------------------------------------------------------


def flop_estimate(
    cfg: ModelConfig,
    n: int,
    baseline: str = "dga",
    criteria_count: int = 3,
    feature_dim: int = 64,
    num_classes: int = 5,
    katz_dim: int | None = None,
) -> dict:
    """Multiply-accumulate counts for one forward pass (FLOPs = 2 x MACs).

    DGA per layer: offset/attention heads ``2NCMKT``, value and output
    projections ``2NC^2T``, interpolation ``WNKCT`` with ``W`` the kernel
    support. Full attention per layer: ``4NC^2`` projections and ``2N^2C``
    for scores and the weighted sum.
    """
    c, m, k, t = cfg.hidden, cfg.heads, cfg.keys, criteria_count
    if baseline == "dga":
        w = cfg.dga(t).support
        attention = n * (2 * c * m * k * t + 2 * c * c * t + w * k * c * t)
    elif baseline == "full_mha":
        attention = 4 * n * c * c + 2 * n * n * c
    else:
        raise ValueError(f"unknown baseline {baseline!r}")
    ffn = 2 * n * c * c
    if katz_dim is None:
        katz_dim = cfg.katz.resolve_anchors(n)
    pe = n * katz_dim * c + n * c * c if cfg.pe_mode == "katz" else 0
    encoder = n * feature_dim * c
    head = n * c * num_classes
    per_layer = {"attention": attention, "ffn": ffn}
    total = encoder + pe + head + cfg.layers * (attention + ffn)
    return {
        "per_layer": per_layer,
        "attention_total": cfg.layers * attention,
        "encoder": encoder,
        "positional_encoding": pe,
        "classifier": head,
        "total_macs": total,
        "total_flops": 2 * total,
    }
