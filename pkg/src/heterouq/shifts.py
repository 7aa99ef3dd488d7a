"""Distribution shifts: leave-out-classes and feature perturbations.

Each shift partitions the evaluation nodes into a designated OOD set and an
in-distribution evaluation set. Leave-out-classes touches only the masks and
the label indexing; feature shifts touch only the feature matrix.
"""

from dataclasses import dataclass

import numpy as np

from .graph import Graph, SplitMasks
from .seeding import make_rng


@dataclass(frozen=True)
class ShiftSpec:
    """Shift descriptor.

    kind "loc" drops entire classes from supervision; ``loc_classes`` lists
    them explicitly, otherwise ``loc_count`` classes are taken from the
    ``loc_policy`` ("last" or "first") end of the class range. The feature
    kinds ("near_features", "far_features") replace the features of a random
    ``ood_fraction`` of the test partition with noise.
    """

    kind: str
    loc_classes: tuple | None = None
    loc_policy: str = "last"
    loc_count: int = 1
    ood_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("loc", "near_features", "far_features"):
            raise ValueError(f"unknown shift kind {self.kind!r}")
        if self.kind == "loc":
            if self.loc_classes is not None and len(self.loc_classes) == 0:
                raise ValueError("loc_classes must be nonempty when given")
            if self.loc_policy not in ("first", "last"):
                raise ValueError(f"unknown loc policy {self.loc_policy!r}")
        else:
            if not 0.0 < self.ood_fraction < 1.0:
                raise ValueError("ood_fraction must lie in (0, 1)")

    def resolve_loc_classes(self, num_classes: int) -> list[int]:
        if self.loc_classes is not None:
            return sorted(int(c) for c in self.loc_classes)
        if self.loc_policy == "last":
            return list(range(num_classes - self.loc_count, num_classes))
        return list(range(self.loc_count))


@dataclass(frozen=True)
class LocResult:
    masks: SplitMasks
    ood_nodes: np.ndarray
    id_eval_nodes: np.ndarray
    retained_classes: np.ndarray
    labels: np.ndarray        # densely re-indexed; held-out classes get -1
    num_classes: int          # number of retained classes


@dataclass(frozen=True)
class FeatureShiftResult:
    graph: Graph
    ood_nodes: np.ndarray
    id_eval_nodes: np.ndarray


def apply_loc(g: Graph, masks: SplitMasks, spec: ShiftSpec) -> LocResult:
    """Strip held-out classes from supervision and designate them as OOD.

    The graph itself is untouched: held-out nodes stay visible as unlabeled
    neighbors. Labels of the retained classes are re-indexed densely so the
    classifier head can stay contiguous; held-out nodes map to -1.
    """
    if spec.kind != "loc":
        raise ValueError("apply_loc needs a loc shift spec")
    ood_classes = spec.resolve_loc_classes(g.num_classes)
    bad = [c for c in ood_classes if not 0 <= c < g.num_classes]
    if bad:
        raise ValueError(f"held-out classes out of range: {bad}")
    retained = np.array([c for c in range(g.num_classes) if c not in set(ood_classes)])
    if retained.size < 2:
        raise ValueError("need at least 2 retained classes")

    remap = -np.ones(g.num_classes, dtype=np.int64)
    remap[retained] = np.arange(retained.size)
    labels = remap[g.labels]

    is_ood = np.isin(g.labels, ood_classes)
    train = masks.train[~is_ood[masks.train]]
    val = masks.val[~is_ood[masks.val]]
    if train.size == 0:
        raise ValueError("leave-out-classes emptied the training mask")
    new_masks = SplitMasks.build(train, val, masks.test, g.num_nodes)

    ood_nodes = np.flatnonzero(is_ood)
    id_eval = masks.test[~is_ood[masks.test]]
    return LocResult(new_masks, ood_nodes, id_eval, retained, labels, retained.size)


def apply_feature_noise(g: Graph, masks: SplitMasks, spec: ShiftSpec) -> FeatureShiftResult:
    """Replace the features of a random subset of test nodes with noise.

    "near" noise matches the dataset's maximum-likelihood feature statistics
    (Bernoulli for binary features, per-column Gaussian otherwise); "far"
    noise is standard normal. Masks and edges are untouched.
    """
    if spec.kind not in ("near_features", "far_features"):
        raise ValueError("apply_feature_noise needs a feature shift spec")
    if masks.test.size == 0:
        raise ValueError("feature shift needs a nonempty test partition")
    rng = make_rng(spec.seed)
    n_ood = int(round(spec.ood_fraction * masks.test.size))
    ood_nodes = np.sort(rng.choice(masks.test, size=n_ood, replace=False))
    id_eval = np.setdiff1d(masks.test, ood_nodes)

    features = g.features.copy()
    shape = (n_ood, features.shape[1])
    if spec.kind == "far_features":
        noise = rng.normal(0.0, 1.0, shape)
    elif g.feature_kind == "binary":
        col_mean = g.features.mean(axis=0)
        noise = (rng.random(shape) < col_mean).astype(np.float64)
    else:
        col_mean = g.features.mean(axis=0)
        col_std = g.features.std(axis=0)
        noise = rng.normal(0.0, 1.0, shape) * col_std + col_mean
    features[ood_nodes] = noise
    return FeatureShiftResult(g.with_features(features), ood_nodes, id_eval)
