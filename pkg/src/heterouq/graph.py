"""Transductive graph container, dataset IO, homophily statistics, and
synthetic graph generation.

Graphs are undirected, unweighted, and immutable once built: edges are kept
as a canonical deduplicated array and mirrored into a sparse symmetric
adjacency matrix. All statistics operate on that representation.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .seeding import make_rng


class DatasetError(ValueError):
    """A dataset directory violates the documented on-disk format."""


@dataclass(frozen=True)
class Graph:
    """Immutable node-classification graph.

    Attributes
    ----------
    num_nodes, num_classes : int
    edges : (m, 2) int array of undirected edges, canonical form u < v,
        deduplicated, no self loops.
    features : (n, d) float array
    labels : (n,) int array with values in [0, num_classes)
    feature_kind : "binary" or "continuous"
    adjacency : scipy CSR, symmetric 0/1 with zero diagonal (derived)
    """

    num_nodes: int
    num_classes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    feature_kind: str
    adjacency: sp.csr_matrix

    @staticmethod
    def build(num_nodes, num_classes, edges, features, labels, feature_kind="continuous"):
        """Validate raw arrays, canonicalize the edge list, and derive the
        adjacency matrix."""
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)

        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise DatasetError(
                f"features row count {features.shape[0]} does not match num_nodes {num_nodes}"
            )
        if labels.shape != (num_nodes,):
            raise DatasetError(
                f"labels count {labels.shape[0]} does not match num_nodes {num_nodes}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise DatasetError(
                f"label out of range: values must lie in [0, {num_classes})"
            )
        if feature_kind not in ("binary", "continuous"):
            raise DatasetError(f"unknown feature_kind {feature_kind!r}")
        if edges.size:
            if edges.min() < 0 or edges.max() >= num_nodes:
                raise DatasetError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise DatasetError("self-loop in edge list")

        edges = _canonical_edges(edges)
        adjacency = _adjacency_from_edges(num_nodes, edges)
        for arr in (edges, features, labels):
            arr.setflags(write=False)
        return Graph(num_nodes, num_classes, edges, features, labels, feature_kind, adjacency)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    def with_features(self, features: np.ndarray) -> "Graph":
        """Copy of the graph with a replaced feature matrix (same shape)."""
        return Graph.build(
            self.num_nodes, self.num_classes, self.edges.copy(),
            features, self.labels.copy(), self.feature_kind,
        )

    def subgraph(self, nodes) -> "Graph":
        """Induced subgraph over ``nodes`` with locally re-indexed ids.

        Labels keep their original values; num_classes is unchanged.
        """
        nodes = np.asarray(sorted(set(int(v) for v in nodes)), dtype=np.int64)
        local = -np.ones(self.num_nodes, dtype=np.int64)
        local[nodes] = np.arange(nodes.size)
        keep = (local[self.edges[:, 0]] >= 0) & (local[self.edges[:, 1]] >= 0)
        edges = local[self.edges[keep]]
        return Graph.build(
            nodes.size, self.num_classes, edges,
            self.features[nodes], self.labels[nodes], self.feature_kind,
        )


def _canonical_edges(edges: np.ndarray) -> np.ndarray:
    if edges.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    canon = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return np.ascontiguousarray(canon)


def _adjacency_from_edges(num_nodes: int, edges: np.ndarray) -> sp.csr_matrix:
    if edges.size == 0:
        return sp.csr_matrix((num_nodes, num_nodes))
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(rows.size)
    return sp.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))


@dataclass(frozen=True)
class SplitMasks:
    """Disjoint train/val/test node index sets."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @staticmethod
    def build(train, val, test, num_nodes=None):
        train = np.asarray(sorted(train), dtype=np.int64)
        val = np.asarray(sorted(val), dtype=np.int64)
        test = np.asarray(sorted(test), dtype=np.int64)
        sets = [set(train.tolist()), set(val.tolist()), set(test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split masks are not pairwise disjoint")
        if num_nodes is not None:
            union = sets[0] | sets[1] | sets[2]
            if union and (min(union) < 0 or max(union) >= num_nodes):
                raise ValueError("split mask index out of range")
        for arr in (train, val, test):
            arr.setflags(write=False)
        return SplitMasks(train, val, test)


@dataclass(frozen=True)
class HomophilyReport:
    """Edge/node/class homophily plus the class compatibility matrix.

    ``h_adjusted`` is populated only on request; rows of ``compatibility``
    for classes without incident edges are all-zero by convention.
    """

    h_edge: float
    h_node: float
    h_class: float
    compatibility: np.ndarray
    h_adjusted: float | None = None


# ---------------------------------------------------------------------------
# homophily statistics
# ---------------------------------------------------------------------------

def edge_homophily(g: Graph) -> float:
    """Fraction of undirected edges whose endpoints share a class."""
    if g.num_edges == 0:
        raise ValueError("edge homophily undefined on an empty edge set")
    same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    return float(same.mean())


def _same_label_neighbor_counts(g: Graph):
    """Per-node count of same-class neighbors, and per-node degree."""
    u = np.repeat(np.arange(g.num_nodes), np.diff(g.adjacency.indptr))
    v = g.adjacency.indices
    same = (g.labels[u] == g.labels[v]).astype(np.float64)
    counts = np.bincount(u, weights=same, minlength=g.num_nodes)
    return counts, g.degrees().astype(np.float64)


def node_homophily(g: Graph) -> float:
    """Mean over non-isolated nodes of the same-class neighbor fraction.

    Isolated nodes are skipped: their neighbor fraction has a zero
    denominator and no meaningful value.
    """
    counts, deg = _same_label_neighbor_counts(g)
    active = deg > 0
    if not active.any():
        raise ValueError("node homophily undefined: all nodes isolated")
    return float((counts[active] / deg[active]).mean())


def class_homophily(g: Graph) -> float:
    """Excess intra-class connectivity relative to each class's share of nodes,
    averaged over classes and clamped at zero."""
    if g.num_classes < 2:
        raise ValueError("class homophily needs at least two classes")
    if g.num_edges == 0:
        raise ValueError("class homophily undefined on an empty edge set")
    counts, deg = _same_label_neighbor_counts(g)
    total = 0.0
    for c in range(g.num_classes):
        members = g.labels == c
        deg_sum = deg[members].sum()
        intra = counts[members].sum() / deg_sum if deg_sum > 0 else 0.0
        share = members.sum() / g.num_nodes
        total += max(0.0, intra - share)
    return total / (g.num_classes - 1)


def compatibility_matrix(g: Graph) -> np.ndarray:
    """Row-stochastic class mixing matrix.

    Entry (i, j) is the fraction of edge endpoints incident to class-i nodes
    whose neighbor is of class j. Classes without incident edges get an
    all-zero row.
    """
    if g.num_edges == 0:
        raise ValueError("compatibility matrix undefined on an empty edge set")
    c = g.num_classes
    u = np.repeat(np.arange(g.num_nodes), np.diff(g.adjacency.indptr))
    v = g.adjacency.indices
    mat = np.zeros((c, c))
    np.add.at(mat, (g.labels[u], g.labels[v]), 1.0)
    row_sums = mat.sum(axis=1, keepdims=True)
    nonzero = row_sums[:, 0] > 0
    mat[nonzero] /= row_sums[nonzero]
    return mat


def adjusted_homophily(g: Graph) -> float:
    """Edge homophily corrected for the degree-weighted class distribution.

    Uses the standard adjustment
    ``(h_edge - sum_c (D_c / 2m)^2) / (1 - sum_c (D_c / 2m)^2)``
    with ``D_c`` the summed degree of class c and ``m`` the edge count.
    """
    h_e = edge_homophily(g)
    deg = g.degrees().astype(np.float64)
    total = deg.sum()
    shares_sq = sum(
        (deg[g.labels == c].sum() / total) ** 2 for c in range(g.num_classes)
    )
    if shares_sq >= 1.0:
        raise ValueError("adjusted homophily undefined: single effective class")
    return (h_e - shares_sq) / (1.0 - shares_sq)


def homophily_report(g: Graph, include_adjusted: bool = False) -> HomophilyReport:
    return HomophilyReport(
        h_edge=edge_homophily(g),
        h_node=node_homophily(g),
        h_class=class_homophily(g),
        compatibility=compatibility_matrix(g),
        h_adjusted=adjusted_homophily(g) if include_adjusted else None,
    )


def khop_shells(g: Graph, v: int, k_max: int) -> list[set[int]]:
    """Decompose the neighborhood of ``v`` into shells by BFS distance.

    Returns ``k_max + 1`` disjoint sets; shell 0 is ``{v}`` and shell i holds
    the nodes at shortest-path distance exactly i. Unreachable distances give
    empty sets.
    """
    if not 0 <= v < g.num_nodes:
        raise ValueError(f"node {v} out of range")
    shells = [{int(v)}]
    seen = {int(v)}
    frontier = [int(v)]
    for _ in range(k_max):
        nxt = set()
        for u in frontier:
            for w in g.neighbors(u):
                w = int(w)
                if w not in seen:
                    nxt.add(w)
        seen |= nxt
        shells.append(nxt)
        frontier = sorted(nxt)
    return shells


# ---------------------------------------------------------------------------
# splits and synthetic data
# ---------------------------------------------------------------------------

def make_splits(g: Graph, per_class_train: int = 20, per_class_val: int = 20,
                seed: int = 0, classes=None) -> SplitMasks:
    """Stratified train/val split with everything else assigned to test.

    Parameters
    ----------
    classes : optional iterable of class ids to stratify over. Nodes of other
        classes are never placed in train/val and always land in test.
    """
    rng = make_rng(seed)
    classes = range(g.num_classes) if classes is None else sorted(classes)
    train, val = [], []
    for c in classes:
        members = np.flatnonzero(g.labels == c)
        if members.size < per_class_train + per_class_val:
            raise ValueError(
                f"class {c} has {members.size} nodes, needs at least "
                f"{per_class_train + per_class_val}"
            )
        perm = rng.permutation(members)
        train.extend(perm[:per_class_train].tolist())
        val.extend(perm[per_class_train:per_class_train + per_class_val].tolist())
    taken = set(train) | set(val)
    test = [v for v in range(g.num_nodes) if v not in taken]
    return SplitMasks.build(train, val, test, g.num_nodes)


def make_moons_graph(n_per_class: int, homophily: float, anomaly_fraction: float = 0.0,
                     avg_degree: float = 10.0, seed: int = 0, noise: float = 0.1,
                     anomaly_intra: float = 0.9,
                     per_class_train: int = 20, per_class_val: int = 20):
    """Generate a two-moons graph with an optional anomalous third class.

    Classes 0 and 1 carry interleaving half-moon features; the anomalous
    class 2 (``anomaly_fraction`` of the 2 * n_per_class regular nodes) draws
    features from an isotropic normal centered at (1, 1) with variance 0.1.

    Wiring draws ``avg_degree`` partners per node. Moon nodes pick an
    intra-class partner with probability ``homophily`` and otherwise a
    uniform node of the other moon class, so ``homophily`` controls the
    expected intra-class edge fraction of the regular graph. The anomalous
    class is an injected camouflaged community: it wires among itself with
    the fixed probability ``anomaly_intra`` and attaches its remaining edges
    to a single moon class drawn once per anomalous node, so each anomaly's
    attachment pattern is indistinguishable from a regular node's at any
    ``homophily``. Sweeps over ``homophily`` therefore vary only the regular
    classes' wiring. Train/val masks are stratified over classes 0 and 1
    only.

    Returns
    -------
    (Graph, SplitMasks)
    """
    if n_per_class <= 0:
        raise ValueError("n_per_class must be positive")
    if not 0.0 < homophily <= 1.0:
        raise ValueError("homophily must lie in (0, 1]")
    if anomaly_fraction < 0.0:
        raise ValueError("anomaly_fraction must be non-negative")
    if not 0.0 <= anomaly_intra < 1.0:
        raise ValueError("anomaly_intra must lie in [0, 1)")
    if avg_degree <= 0.0 or avg_degree >= n_per_class:
        raise ValueError(
            f"infeasible degree/homophily combination: avg_degree {avg_degree} "
            f"must lie in (0, n_per_class)"
        )

    rng = make_rng(seed)
    n_anom = int(round(anomaly_fraction * 2 * n_per_class))

    t0 = rng.uniform(0.0, np.pi, n_per_class)
    t1 = rng.uniform(0.0, np.pi, n_per_class)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    feats = [upper + rng.normal(0.0, noise, upper.shape),
             lower + rng.normal(0.0, noise, lower.shape)]
    labels = [np.zeros(n_per_class, dtype=np.int64),
              np.ones(n_per_class, dtype=np.int64)]
    if n_anom > 0:
        feats.append(rng.normal(0.0, np.sqrt(0.1), (n_anom, 2)) + np.array([1.0, 1.0]))
        labels.append(np.full(n_anom, 2, dtype=np.int64))
    features = np.concatenate(feats, axis=0)
    y = np.concatenate(labels)
    n = y.size
    num_classes = 3 if n_anom > 0 else 2

    class_members = [np.flatnonzero(y == c) for c in range(num_classes)]
    if n_anom == 1:
        raise ValueError("a single anomalous node cannot wire intra-class; "
                         "increase anomaly_fraction or set it to 0")
    n_regular = 2 * n_per_class  # moon nodes precede the anomalous block
    camouflage = rng.integers(0, 2, n)  # only read for anomalous nodes
    frac, base = np.modf(avg_degree)
    edge_set = set()
    for v in range(n):
        draws = int(base) + (1 if rng.random() < frac else 0)
        p_intra = anomaly_intra if y[v] == 2 else homophily
        for _ in range(draws):
            if rng.random() < p_intra:
                u = _draw_same_class(rng, class_members[y[v]], v)
            elif y[v] == 2:
                u = _draw_same_class(rng, class_members[camouflage[v]], v)
            else:
                u = _draw_other_class(rng, class_members[:2], y[v], n_regular)
            edge_set.add((min(v, u), max(v, u)))
    edges = np.array(sorted(edge_set), dtype=np.int64)

    g = Graph.build(n, num_classes, edges, features, y, "continuous")
    masks = make_splits(g, per_class_train, per_class_val,
                        seed=int(rng.integers(2**62)), classes=[0, 1])
    return g, masks


def _draw_same_class(rng, members, v):
    while True:
        u = int(members[rng.integers(members.size)])
        if u != v:
            return u


def _draw_other_class(rng, class_members, own, n):
    own_size = class_members[own].size
    idx = int(rng.integers(n - own_size))
    for c, members in enumerate(class_members):
        if c == own:
            continue
        if idx < members.size:
            return int(members[idx])
        idx -= members.size
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# dataset directory IO
# ---------------------------------------------------------------------------

def load_dataset(path):
    """Load a dataset directory.

    Expected layout::

        meta.json      {"num_nodes", "num_features", "num_classes", "feature_kind"}
        edges.csv      header "src,dst", one undirected edge per line, 0-based
        features.csv   num_nodes rows of num_features comma-separated reals
        labels.csv     num_nodes integer lines
        splits.json    optional, arrays "train", "val", "test"

    Returns
    -------
    (Graph, SplitMasks | None)
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    for name in ("meta.json", "edges.csv", "features.csv", "labels.csv"):
        if not (root / name).is_file():
            raise DatasetError(f"missing file: {root / name}")

    meta = json.loads((root / "meta.json").read_text())
    for key in ("num_nodes", "num_features", "num_classes", "feature_kind"):
        if key not in meta:
            raise DatasetError(f"meta.json missing key {key!r}")
    n, d, c = int(meta["num_nodes"]), int(meta["num_features"]), int(meta["num_classes"])

    edges = _read_edges(root / "edges.csv")
    features = _read_matrix(root / "features.csv", n, d)
    labels = _read_labels(root / "labels.csv", n)

    g = Graph.build(n, c, edges, features, labels, meta["feature_kind"])

    masks = None
    split_path = root / "splits.json"
    if split_path.is_file():
        payload = json.loads(split_path.read_text())
        masks = SplitMasks.build(
            payload.get("train", []), payload.get("val", []),
            payload.get("test", []), n,
        )
    return g, masks


def save_dataset(g: Graph, path, masks: SplitMasks | None = None) -> None:
    """Write a graph (and optional splits) in the directory layout that
    :func:`load_dataset` reads."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_nodes": g.num_nodes,
        "num_features": int(g.features.shape[1]),
        "num_classes": g.num_classes,
        "feature_kind": g.feature_kind,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    with open(root / "edges.csv", "w") as fh:
        fh.write("src,dst\n")
        for u, v in g.edges:
            fh.write(f"{u},{v}\n")
    np.savetxt(root / "features.csv", g.features, delimiter=",", fmt="%.17g")
    np.savetxt(root / "labels.csv", g.labels, fmt="%d")
    if masks is not None:
        payload = {
            "train": masks.train.tolist(),
            "val": masks.val.tolist(),
            "test": masks.test.tolist(),
        }
        (root / "splits.json").write_text(json.dumps(payload) + "\n")


def _read_edges(path: Path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "src,dst":
            raise DatasetError(f"{path}: expected header 'src,dst', got {header!r}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'src,dst'")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-integer edge endpoint") from exc
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def _read_matrix(path: Path, n: int, d: int) -> np.ndarray:
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"{path}: could not parse feature matrix") from exc
    if mat.shape != (n, d):
        raise DatasetError(
            f"{path}: feature matrix shape {mat.shape} does not match meta ({n}, {d})"
        )
    return mat


def _read_labels(path: Path, n: int) -> np.ndarray:
    try:
        labels = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise DatasetError(f"{path}: could not parse labels") from exc
    if labels.shape != (n,):
        raise DatasetError(f"{path}: label count {labels.shape[0]} does not match meta {n}")
    return labels
