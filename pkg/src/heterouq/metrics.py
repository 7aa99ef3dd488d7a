"""Detection and calibration metrics.

AUC-ROC follows the rank-statistic (Mann-Whitney) convention where ties
contribute one half; AUC-PR is average precision under a descending-score
sweep with tied scores processed as one group.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class SingleClassError(ValueError):
    """Both classes must be present to rank one against the other."""


def _validate_binary(scores, flags):
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags).astype(bool)
    if scores.shape != flags.shape or scores.ndim != 1:
        raise ValueError("scores and flags must be 1-D arrays of equal length")
    n_pos = int(flags.sum())
    if n_pos == 0 or n_pos == flags.size:
        raise SingleClassError("need at least one positive and one negative")
    return scores, flags, n_pos, flags.size - n_pos


def auc_roc(scores, flags) -> float:
    """P(score_pos > score_neg) + 0.5 * P(score_pos = score_neg)."""
    scores, flags, n_pos, n_neg = _validate_binary(scores, flags)
    ranks = rankdata(scores, method="average")
    u = ranks[flags].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_pr(scores, flags) -> float:
    """Average precision over descending score thresholds."""
    scores, flags, n_pos, _ = _validate_binary(scores, flags)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_flags = flags[order]
    tp = np.cumsum(sorted_flags)
    fp = np.cumsum(~sorted_flags)
    # keep only the last row of every tied-score block
    block_end = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    block_end = np.concatenate([block_end, [scores.size - 1]])
    tp = tp[block_end]
    fp = fp[block_end]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def ece(probs, labels, bins: int = 15) -> float:
    """Expected calibration error over equal-width confidence bins."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    total = 0.0
    for b in range(bins):
        in_bin = idx == b
        count = int(in_bin.sum())
        if count:
            total += count / probs.shape[0] * abs(correct[in_bin].mean() - conf[in_bin].mean())
    return total


def brier(probs, labels) -> float:
    """Mean squared difference between probabilities and one-hot labels,
    summed over classes; lies in [0, 2]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros_like(probs)
    onehot[np.arange(labels.size), labels] = 1.0
    return float(((probs - onehot) ** 2).sum(axis=1).mean())


def misclassification_auc(scores, is_correct) -> float:
    """AUC-ROC for spotting wrong predictions: positives are the errors."""
    return auc_roc(scores, ~np.asarray(is_correct).astype(bool))


@dataclass(frozen=True)
class ReliabilityBin:
    center: float
    accuracy: float
    count: int


def reliability_curve(epistemic_scores, is_correct, bins: int = 20) -> list[ReliabilityBin]:
    """Mean accuracy per confidence bin, where confidence is the negated
    uncertainty min-max normalized to [0, 1]. Empty bins report NaN."""
    scores = np.asarray(epistemic_scores, dtype=np.float64)
    correct = np.asarray(is_correct).astype(bool)
    conf = -scores
    span = conf.max() - conf.min()
    conf = (conf - conf.min()) / span if span > 0 else np.full_like(conf, 0.5)
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    curve = []
    for b in range(bins):
        in_bin = idx == b
        count = int(in_bin.sum())
        acc = float(correct[in_bin].mean()) if count else float("nan")
        curve.append(ReliabilityBin((b + 0.5) / bins, acc, count))
    return curve
