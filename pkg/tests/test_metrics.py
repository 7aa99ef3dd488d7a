import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heterouq import auc_pr, auc_roc, brier, ece, misclassification_auc, reliability_curve
from heterouq.metrics import SingleClassError
from heterouq.seeding import make_rng


def pairwise_auc(scores, flags):
    """Brute-force rank statistic: P(pos > neg) + 0.5 P(pos = neg)."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags).astype(bool)
    pos = scores[flags]
    neg = scores[~flags]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


def test_auc_roc_documented_case():
    assert auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_roc_perfect_separation():
    assert auc_roc([1, 2, 3, 10, 11], [0, 0, 0, 1, 1]) == 1.0


def test_auc_roc_all_ties_is_half():
    assert auc_roc([5.0] * 6, [0, 1, 0, 1, 0, 1]) == 0.5


def test_auc_roc_single_class_errors():
    with pytest.raises(SingleClassError):
        auc_roc([1.0, 2.0], [1, 1])


def test_auc_roc_equals_bruteforce_exactly_on_random_inputs():
    rng = make_rng(123)
    for trial in range(100):
        n = int(rng.integers(2, 201))
        # quantized scores force plenty of ties
        scores = np.round(rng.normal(size=n), 1)
        flags = rng.integers(0, 2, n).astype(bool)
        if flags.all() or not flags.any():
            flags[0] = ~flags[0]
        assert auc_roc(scores, flags) == pairwise_auc(scores, flags)


@given(st.floats(0.01, 10.0), st.floats(-5.0, 5.0))
@settings(max_examples=25, deadline=None)
def test_auc_roc_invariant_under_increasing_transform(scale, offset):
    rng = make_rng(7)
    scores = rng.normal(size=40)
    flags = rng.integers(0, 2, 40).astype(bool)
    flags[0], flags[1] = True, False
    transformed = scale * scores + offset
    assert auc_roc(scores, flags) == pytest.approx(auc_roc(transformed, flags), abs=1e-12)


def test_auc_roc_negation_complement_for_tie_free_scores():
    rng = make_rng(8)
    scores = rng.permutation(50).astype(float)  # distinct
    flags = rng.integers(0, 2, 50).astype(bool)
    flags[0], flags[1] = True, False
    assert auc_roc(scores, flags) + auc_roc(-scores, flags) == pytest.approx(1.0, abs=1e-12)


def test_auc_pr_perfect_and_uniform():
    assert auc_pr([1, 2, 3, 10], [0, 0, 0, 1]) == 1.0
    # all scores equal: a single threshold, precision = prevalence
    assert auc_pr([1.0, 1.0, 1.0, 1.0], [1, 0, 1, 0]) == pytest.approx(0.5)


def test_auc_pr_hand_case():
    # descending sweep over scores 4,3,2,1 with flags 1,0,1,0:
    # steps at recall 0.5 (precision 1) and recall 1.0 (precision 2/3)
    value = auc_pr([1.0, 2.0, 3.0, 4.0], [0, 1, 0, 1])
    assert value == pytest.approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0), abs=1e-12)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def test_ece_perfectly_confident_correct_is_zero():
    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 1])
    assert ece(probs, labels) == 0.0
    assert brier(probs, labels) == 0.0


def test_ece_uniform_balanced_is_zero():
    probs = np.full((4, 2), 0.5)
    labels = np.array([0, 1, 0, 1])
    # convention: argmax of a tie picks class 0, so accuracy is 0.5 = confidence
    assert ece(probs, labels) == pytest.approx(0.0, abs=1e-12)


def test_ece_hand_built_bins():
    probs = np.array([
        [0.95, 0.05],   # bin 14, correct
        [0.92, 0.08],   # bin 13, incorrect
        [0.55, 0.45],   # bin 8, correct
        [0.52, 0.48],   # bin 7, incorrect
    ])
    labels = np.array([0, 1, 0, 1])
    expected = (1 / 4) * abs(1.0 - 0.95) + (1 / 4) * abs(0.0 - 0.92) \
        + (1 / 4) * abs(1.0 - 0.55) + (1 / 4) * abs(0.0 - 0.52)
    assert ece(probs, labels, bins=15) == pytest.approx(expected, abs=1e-12)


def test_brier_uniform_binary():
    probs = np.full((2, 2), 0.5)
    labels = np.array([0, 1])
    assert brier(probs, labels) == pytest.approx(0.5)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_brier_and_ece_ranges(seed):
    rng = make_rng(seed)
    logits = rng.normal(size=(20, 3)) * 3
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 3, 20)
    assert 0.0 <= brier(probs, labels) <= 2.0
    assert 0.0 <= ece(probs, labels) <= 1.0


# ---------------------------------------------------------------------------
# misclassification / reliability
# ---------------------------------------------------------------------------

def test_misclassification_all_correct_errors():
    with pytest.raises(SingleClassError):
        misclassification_auc([0.1, 0.2], [True, True])


def test_misclassification_perfect_ranking():
    scores = np.array([0.1, 0.2, 0.9, 0.8])
    correct = np.array([True, True, False, False])
    assert misclassification_auc(scores, correct) == 1.0


def test_reliability_curve_matches_direct_histogram():
    rng = make_rng(77)
    scores = rng.normal(size=200)
    correct = rng.integers(0, 2, 200).astype(bool)
    bins = 20
    curve = reliability_curve(scores, correct, bins=bins)
    assert len(curve) == bins

    conf = -scores
    conf = (conf - conf.min()) / (conf.max() - conf.min())
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    for b, entry in enumerate(curve):
        members = idx == b
        assert entry.count == int(members.sum())
        if entry.count:
            assert entry.accuracy == pytest.approx(correct[members].mean())
        else:
            assert np.isnan(entry.accuracy)
