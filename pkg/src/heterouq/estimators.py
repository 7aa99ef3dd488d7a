"""Post-hoc uncertainty estimators over embedding stacks.

The primary estimator reduces each selected layer with PCA, concatenates the
reduced embeddings, and scores epistemic uncertainty as a k-nearest-neighbor
distance statistic against the training nodes. Mixture-of-Gaussians and RBF
kernel density estimators share the same reduction pipeline, and simple
logit/softmax baselines operate on the stack directly.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .models import EmbeddingStack
from .tensor import assert_finite

LOG_DENSITY_FLOOR = -1e12


@dataclass
class PcaMap:
    """Affine projection onto the leading principal components.

    ``explained_variance_ratio`` covers the full spectrum; ``components``
    holds only the retained directions (columns, orthonormal).
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    retained_ratio: float

    @property
    def rank(self) -> int:
        return self.components.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) @ self.components

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return z @ self.components.T + self.mean


def fit_pca(embeddings: np.ndarray, variance_target: float = 0.95) -> PcaMap:
    """Center the rows and keep the smallest component count whose cumulative
    explained variance reaches ``variance_target``.

    Degenerate input (all rows equal) keeps a single zero-variance component
    and warns instead of failing.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 0.0 < variance_target <= 1.0:
        raise ValueError("variance_target must lie in (0, 1]")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = s**2 / (x.shape[0] - 1)
    total = variances.sum()
    if total <= 0.0:
        warnings.warn("PCA input has zero variance; keeping one null component")
        ratios = np.zeros_like(variances)
        return PcaMap(mean, vt[:1].T, ratios, 1.0)
    ratios = variances / total
    cum = np.cumsum(ratios)
    rank = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    rank = min(rank, len(ratios))
    return PcaMap(mean, vt[:rank].T, ratios, float(cum[rank - 1]))


def knn_scores(reference: np.ndarray, queries: np.ndarray, k: int,
               distance_form: str = "sum_sq") -> np.ndarray:
    """KNN distance statistic of each query against the reference rows.

    Euclidean metric; distance ties are broken in favor of the lower
    reference row index. ``sum_sq`` sums the squared distances of the k
    nearest rows; ``mean_then_sq`` squares their mean distance.
    """
    if not 1 <= k <= reference.shape[0]:
        raise ValueError(f"k={k} out of range for {reference.shape[0]} reference rows")
    if distance_form not in ("sum_sq", "mean_then_sq"):
        raise ValueError(f"unknown distance_form {distance_form!r}")
    dists = cdist(np.atleast_2d(queries), reference)
    # stable argsort keeps the original (index) order among equal distances
    nearest = np.argsort(dists, axis=1, kind="stable")[:, :k]
    picked = np.take_along_axis(dists, nearest, axis=1)
    if distance_form == "sum_sq":
        return (picked**2).sum(axis=1)
    return picked.mean(axis=1) ** 2


@dataclass
class JldeConfig:
    """Options for the joint latent density estimator.

    layer_selection:
        "all_cat"    concatenate the selected layers (default)
        "all_add"    score each layer separately and sum
        "first_last" concatenate layers 1 and L
        "single"     use ``single_layer`` only
    include_input_layer prepends the raw features (layer 0) to the
    selection. pca_on "all" fits the projections transductively on every
    node; "train" restricts the fit to training nodes.
    """

    k: int = 5
    layer_selection: str = "all_cat"
    single_layer: int | None = None
    include_input_layer: bool = False
    distance_form: str = "sum_sq"
    variance_target: float = 0.95
    pca_on: str = "all"

    def selected_layers(self, depth: int) -> list[int]:
        if self.layer_selection in ("all_cat", "all_add"):
            layers = list(range(1, depth + 1))
        elif self.layer_selection == "first_last":
            layers = [1, depth] if depth > 1 else [1]
        elif self.layer_selection == "single":
            if self.single_layer is None or not 0 <= self.single_layer <= depth:
                raise ValueError(f"single_layer must lie in [0, {depth}]")
            layers = [self.single_layer]
        else:
            raise ValueError(f"unknown layer_selection {self.layer_selection!r}")
        if self.include_input_layer and 0 not in layers:
            layers = [0] + layers
        return layers


@dataclass
class JldeEstimator:
    """Fitted joint latent density estimator."""

    cfg: JldeConfig
    layer_ids: list
    pca_maps: list
    references: list  # one matrix for concat modes, one per layer for all_add

    @property
    def reference_width(self) -> int:
        return sum(r.shape[1] for r in self.references)


def fit_jlde(stack: EmbeddingStack, masks, cfg: JldeConfig | None = None) -> JldeEstimator:
    """Fit per-layer PCA maps and collect the training-node reference rows."""
    cfg = cfg or JldeConfig()
    train_idx = np.asarray(masks.train, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("JLDE needs a nonempty train mask")
    if cfg.k > train_idx.size:
        raise ValueError(f"k={cfg.k} exceeds the {train_idx.size} training rows")

    layer_ids = cfg.selected_layers(stack.depth)
    pca_maps = []
    reduced_train = []
    for i in layer_ids:
        h = stack.layers[i]
        fit_rows = h if cfg.pca_on == "all" else h[train_idx]
        pca = fit_pca(fit_rows, cfg.variance_target)
        pca_maps.append(pca)
        reduced_train.append(pca.transform(h[train_idx]))

    if cfg.layer_selection == "all_add":
        references = reduced_train
    else:
        references = [np.concatenate(reduced_train, axis=1)]
    return JldeEstimator(cfg, layer_ids, pca_maps, references)


def score_jlde(est: JldeEstimator, stack: EmbeddingStack, query_nodes=None) -> np.ndarray:
    """Epistemic scores for ``query_nodes`` (default: every node)."""
    if query_nodes is None:
        query_nodes = np.arange(stack.layers[0].shape[0])
    query_nodes = np.asarray(query_nodes, dtype=np.int64)
    reduced = [
        pca.transform(stack.layers[i][query_nodes])
        for i, pca in zip(est.layer_ids, est.pca_maps)
    ]
    if est.cfg.layer_selection == "all_add":
        scores = np.zeros(query_nodes.size)
        for q, ref in zip(reduced, est.references):
            scores += knn_scores(ref, q, est.cfg.k, est.cfg.distance_form)
    else:
        q = np.concatenate(reduced, axis=1)
        scores = knn_scores(est.references[0], q, est.cfg.k, est.cfg.distance_form)
    assert_finite(scores, "JLDE scores")
    return scores


# ---------------------------------------------------------------------------
# alternative density estimators on the same reduced joint space
# ---------------------------------------------------------------------------

def _joint_pipeline(stack, masks, cfg):
    """Shared reduction: per-layer PCA plus concatenation, returning the
    training reference matrix and a transform for arbitrary query nodes."""
    cfg = cfg or JldeConfig()
    base = JldeConfig(**{**cfg.__dict__, "k": 1,
                         "layer_selection": "all_cat"
                         if cfg.layer_selection == "all_add" else cfg.layer_selection})
    est = fit_jlde(stack, masks, base)

    def transform(query_nodes):
        query_nodes = np.asarray(query_nodes, dtype=np.int64)
        return np.concatenate(
            [pca.transform(stack.layers[i][query_nodes])
             for i, pca in zip(est.layer_ids, est.pca_maps)], axis=1)

    return est.references[0], transform


@dataclass
class MogDensity:
    """Per-class diagonal Gaussian mixture with class-prior weights."""

    means: np.ndarray        # (c, d)
    variances: np.ndarray    # (c, d)
    log_weights: np.ndarray  # (c,)
    transform: object = field(repr=False, default=None)

    def log_density(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        parts = []
        for mean, var, lw in zip(self.means, self.variances, self.log_weights):
            quad = ((z - mean) ** 2 / var).sum(axis=1)
            norm = 0.5 * (np.log(2.0 * np.pi * var)).sum()
            parts.append(lw - 0.5 * quad - norm)
        return np.maximum(logsumexp(np.stack(parts, axis=0), axis=0), LOG_DENSITY_FLOOR)

    def score(self, stack_or_z, query_nodes=None) -> np.ndarray:
        return -self._log_density_of(stack_or_z, query_nodes)

    def _log_density_of(self, stack_or_z, query_nodes):
        if isinstance(stack_or_z, EmbeddingStack):
            if query_nodes is None:
                query_nodes = np.arange(stack_or_z.layers[0].shape[0])
            return self.log_density(self.transform(query_nodes))
        return self.log_density(stack_or_z)


def fit_mog(stack: EmbeddingStack, masks, labels, cfg: JldeConfig | None = None,
            variance_floor: float = 1e-6) -> MogDensity:
    """Maximum-likelihood diagonal Gaussian per class on the reduced joint
    embeddings of the training nodes."""
    reference, transform = _joint_pipeline(stack, masks, cfg)
    train_idx = np.asarray(masks.train, dtype=np.int64)
    y = np.asarray(labels)[train_idx]
    classes = np.unique(y)
    means, variances, weights = [], [], []
    for c in classes:
        rows = reference[y == c]
        if rows.shape[0] < 2:
            raise ValueError(f"class {c} has fewer than 2 training rows")
        means.append(rows.mean(axis=0))
        var = rows.var(axis=0)
        if (var < variance_floor).any():
            warnings.warn(f"class {c}: zero-variance dimensions floored at {variance_floor}")
            var = np.maximum(var, variance_floor)
        variances.append(var)
        weights.append(rows.shape[0] / reference.shape[0])
    return MogDensity(np.stack(means), np.stack(variances),
                      np.log(np.asarray(weights)), transform)


@dataclass
class KdeDensity:
    """RBF kernel density against the training reference rows."""

    reference: np.ndarray
    bandwidth: float
    transform: object = field(repr=False, default=None)

    def log_density(self, z: np.ndarray) -> np.ndarray:
        d2 = cdist(np.atleast_2d(z), self.reference, "sqeuclidean")
        log_kernel = -d2 / (2.0 * self.bandwidth**2)
        log_mean = logsumexp(log_kernel, axis=1) - np.log(self.reference.shape[0])
        return np.maximum(log_mean, LOG_DENSITY_FLOOR)

    def score(self, stack_or_z, query_nodes=None) -> np.ndarray:
        if isinstance(stack_or_z, EmbeddingStack):
            if query_nodes is None:
                query_nodes = np.arange(stack_or_z.layers[0].shape[0])
            return -self.log_density(self.transform(query_nodes))
        return -self.log_density(stack_or_z)


def fit_kde(stack: EmbeddingStack, masks, bandwidth: float | None = None,
            cfg: JldeConfig | None = None) -> KdeDensity:
    """RBF KDE on the reduced joint embeddings; the default bandwidth is the
    median pairwise distance between reference rows."""
    reference, transform = _joint_pipeline(stack, masks, cfg)
    if bandwidth is None:
        pair = cdist(reference, reference)
        upper = pair[np.triu_indices(pair.shape[0], k=1)]
        bandwidth = float(np.median(upper)) if upper.size else 1.0
        if bandwidth <= 0.0:
            bandwidth = 1.0
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    return KdeDensity(reference, bandwidth, transform)


# ---------------------------------------------------------------------------
# logit / softmax baselines
# ---------------------------------------------------------------------------

def score_energy(stack: EmbeddingStack) -> np.ndarray:
    """Negative log-sum-exp of the logits; low energy means confident."""
    return -logsumexp(stack.logits, axis=1)


def score_msp(stack: EmbeddingStack) -> np.ndarray:
    """Aleatoric uncertainty: one minus the maximal softmax response."""
    return 1.0 - stack.probs.max(axis=1)


def score_sampling_variance(prob_list) -> np.ndarray:
    """Mean per-class variance of softmax outputs across samples/members."""
    probs = np.stack(prob_list, axis=0)
    if probs.shape[0] < 2:
        raise ValueError("sampling variance needs at least 2 probability matrices")
    return probs.var(axis=0).mean(axis=1)


# ---------------------------------------------------------------------------
# score table
# ---------------------------------------------------------------------------

@dataclass
class ScoreTable:
    """Per-node uncertainty scores with OOD and correctness flags."""

    node_ids: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    is_ood: np.ndarray
    is_correct: np.ndarray

    def __post_init__(self):
        assert_finite(self.aleatoric, "aleatoric scores")
        assert_finite(self.epistemic, "epistemic scores")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "aleatoric", "epistemic", "is_ood", "is_correct"])
            for i in range(self.node_ids.size):
                writer.writerow([
                    int(self.node_ids[i]),
                    f"{self.aleatoric[i]:.10g}",
                    f"{self.epistemic[i]:.10g}",
                    int(self.is_ood[i]),
                    int(self.is_correct[i]),
                ])
