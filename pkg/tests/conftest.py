import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from dgt.graph import from_edges  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
TOY_DATA = ROOT / "data" / "toy"


def random_graph(rng, n, p=0.2, feature_dim=4, num_classes=3, with_labels=True):
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    feats = rng.normal(size=(n, feature_dim))
    labels = rng.integers(0, num_classes, n) if with_labels else None
    return from_edges(n, edges, feats, labels, num_classes=num_classes if with_labels else None), edges


@st.composite
def graphs(draw, min_nodes=1, max_nodes=30, feature_dim=3):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    edges = draw(st.lists(pairs, max_size=3 * n))
    labels = draw(st.lists(st.integers(0, 2), min_size=n, max_size=n))
    seed = draw(st.integers(0, 2**16))
    feats = np.random.default_rng(seed).normal(size=(n, feature_dim))
    return from_edges(n, edges, feats, labels), edges


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def path_graph(n, feature_dim=2):
    return from_edges(n, [(i, i + 1) for i in range(n - 1)], np.ones((n, feature_dim)))
