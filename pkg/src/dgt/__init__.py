"""Deformable graph transformer for node classification."""

from .graph import Graph, SbmConfig, Split, generate_sbm, homophily_ratio, load_graph, make_split, write_graph
from .katz import KatzConfig, KatzFeatures, compute_katz
from .sequences import Criterion, SequenceSet, build_sequences
from .dga import DgaConfig, dga_forward, interpolate, kernel_weight
from .model import DgtModel, FullMhaModel, ModelConfig, flop_estimate, forward, full_mha_forward

__version__ = "0.1.0"

__all__ = [
    "Graph", "SbmConfig", "Split", "generate_sbm", "homophily_ratio", "load_graph", "make_split", "write_graph",
    "KatzConfig", "KatzFeatures", "compute_katz",
    "Criterion", "SequenceSet", "build_sequences",
    "DgaConfig", "dga_forward", "interpolate", "kernel_weight",
    "DgtModel", "FullMhaModel", "ModelConfig", "flop_estimate", "forward", "full_mha_forward",
]
