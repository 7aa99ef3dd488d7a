import numpy as np
import pytest

from heterouq import Graph
from heterouq.seeding import make_rng


def random_graph(num_nodes=50, num_classes=3, num_features=4, edge_factor=2.0, seed=0):
    """Random undirected graph with features and labels, for oracle tests."""
    rng = make_rng(seed)
    edges = set()
    target = int(edge_factor * num_nodes)
    while len(edges) < target:
        u, v = int(rng.integers(num_nodes)), int(rng.integers(num_nodes))
        if u != v:
            edges.add((min(u, v), max(u, v)))
    reps = -(-num_nodes // num_classes)
    labels = rng.permutation(np.tile(np.arange(num_classes), reps)[:num_nodes])
    return Graph.build(
        num_nodes, num_classes,
        np.array(sorted(edges)),
        rng.normal(size=(num_nodes, num_features)),
        labels,
        "continuous",
    )


def path_graph(labels):
    """Path 0-1-...-(n-1) with the given labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    edges = np.array([[i, i + 1] for i in range(n - 1)], dtype=np.int64).reshape(-1, 2)
    feats = np.arange(n, dtype=np.float64)[:, None]
    return Graph.build(n, int(labels.max()) + 1, edges, feats, labels, "continuous")


@pytest.fixture
def rng():
    return make_rng(1234)
