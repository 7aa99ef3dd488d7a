import numpy as np
import pytest

from heterouq import (
    FiniteGenerativeModel,
    cmi,
    gain_bound,
    information_balance,
    information_homophily,
    mi,
    push_forward,
    random_model,
    verify_theory,
)
from heterouq.infotheory import EnumeratedJoint, anchor_var
from heterouq.seeding import make_rng

Y = [("Y",)]


def model_from_joint(joint, layer_maps, hidden_sizes):
    joint = np.asarray(joint, dtype=np.float64)
    return FiniteGenerativeModel(
        label_size=joint.shape[0],
        shell_sizes=tuple(joint.shape[1:]),
        joint=joint,
        layer_maps=tuple(tuple(m) for m in layer_maps),
        hidden_sizes=tuple(tuple(s) for s in hidden_sizes),
    )


def identity_maps_model(joint):
    """One layer whose maps copy each shell's own previous value."""
    joint = np.asarray(joint, dtype=np.float64)
    sizes = joint.shape[1:]
    maps = []
    num_shells = len(sizes)
    for k, size in enumerate(sizes):
        lo = max(k - 1, 0)
        hi = min(k + 1, num_shells - 1)
        dom = tuple(sizes[lo:hi + 1])
        own_axis = k - lo
        grid = np.indices(dom)
        maps.append(grid[own_axis])
    return model_from_joint(joint, [maps], [list(sizes)])


def constant_maps_model(joint):
    joint = np.asarray(joint, dtype=np.float64)
    sizes = joint.shape[1:]
    maps = []
    num_shells = len(sizes)
    for k in range(num_shells):
        lo = max(k - 1, 0)
        hi = min(k + 1, num_shells - 1)
        dom = tuple(sizes[lo:hi + 1])
        maps.append(np.zeros(dom, dtype=np.int64))
    return model_from_joint(joint, [maps], [[1] * num_shells])


# ---------------------------------------------------------------------------
# mutual information basics
# ---------------------------------------------------------------------------

def test_mi_independent_bits_is_zero():
    joint = np.full((2, 2), 0.25)  # Y and S_0 independent uniform
    m = identity_maps_model(joint)
    j = push_forward(m)
    assert mi(j, Y, [("S", 0)]) == pytest.approx(0.0, abs=1e-15)


def test_mi_identity_coupling_is_log2():
    joint = np.array([[0.5, 0.0], [0.0, 0.5]])
    m = identity_maps_model(joint)
    j = push_forward(m)
    assert mi(j, Y, [("S", 0)]) == pytest.approx(np.log(2.0), abs=1e-12)


def test_mi_symmetry_and_nonnegativity():
    m = random_model(3, 2, 1, 3, seed=5)
    j = push_forward(m)
    a = mi(j, Y, [("S", 1)])
    b = mi(j, [("S", 1)], Y)
    assert a == pytest.approx(b, abs=1e-13)
    assert a >= -1e-12


def test_mi_overlapping_groups_error():
    m = random_model(2, 1, 1, 2, seed=6)
    j = push_forward(m)
    with pytest.raises(ValueError, match="overlap"):
        mi(j, [("S", 0)], [("S", 0), ("S", 1)])


def test_cmi_chain_rule_exact():
    for seed in range(10):
        m = random_model(3, 2, 2, 3, seed=seed)
        j = push_forward(m)
        b, c = [("S", 0)], [("S", 1)]
        lhs = mi(j, Y, b + c)
        rhs = mi(j, Y, b) + cmi(j, Y, c, b)
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_cmi_conditioning_on_member_gives_zero():
    m = random_model(2, 1, 1, 3, seed=9)
    j = push_forward(m)
    assert cmi(j, Y, [("S", 0)], [("S", 0)]) == 0.0


# ---------------------------------------------------------------------------
# push-forward
# ---------------------------------------------------------------------------

def test_push_forward_identity_maps_preserve_shell_distribution():
    rng = make_rng(3)
    joint = rng.random((2, 3, 2))
    joint /= joint.sum()
    m = identity_maps_model(joint)
    j = push_forward(m)
    # H_{1,k} equals S_k outcome-by-outcome, so their MI with anything matches
    for k in range(2):
        cols_s = j.columns([("S", k)])
        cols_h = j.columns([("H", 1, k)])
        assert np.array_equal(j.assignments[:, cols_s], j.assignments[:, cols_h])


def test_push_forward_constant_maps_destroy_information():
    rng = make_rng(4)
    joint = rng.random((2, 2, 2))
    joint /= joint.sum()
    m = constant_maps_model(joint)
    j = push_forward(m)
    assert mi(j, Y, [("H", 1, 0)]) == pytest.approx(0.0, abs=1e-15)


def test_push_forward_mass_is_preserved():
    for seed in range(5):
        m = random_model(3, 2, 3, 3, seed=100 + seed)
        j = push_forward(m)
        assert j.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert (j.probs > 0).all()


# ---------------------------------------------------------------------------
# layer-wise balance and bounds
# ---------------------------------------------------------------------------

def test_balance_residual_tiny_on_random_models():
    for seed in range(30):
        m = random_model(int(2 + seed % 2), int(1 + seed % 2), int(1 + seed % 3),
                         3, seed=seed)
        j = push_forward(m)
        for i in range(m.num_layers):
            terms = information_balance(m, i, j)
            assert abs(terms["residual"]) < 1e-9


def test_balance_holds_with_information_destroying_layer():
    rng = make_rng(12)
    joint = rng.random((2, 2, 2))
    joint /= joint.sum()
    m = constant_maps_model(joint)
    terms = information_balance(m, 0)
    assert terms["label_info_next"] == pytest.approx(0.0, abs=1e-15)
    assert abs(terms["residual"]) < 1e-12


def test_relative_info_lower_bound():
    for seed in range(20):
        m = random_model(2, 2, 2, 3, seed=200 + seed)
        j = push_forward(m)
        for i in range(m.num_layers):
            terms = information_balance(m, i, j)
            assert -terms["relative_info"] <= terms["label_info_input"] + 1e-9


def test_gain_nonnegative_and_identity_form():
    for seed in range(20):
        m = random_model(3, 2, 2, 3, seed=300 + seed)
        j = push_forward(m)
        for i in range(m.num_layers):
            terms = information_balance(m, i, j)
            assert terms["info_gain"] >= -1e-12
            assert terms["info_gain"] == pytest.approx(terms["gain_identity"], abs=1e-9)


def test_homophily_zero_when_new_shell_independent():
    # p(y, s0, s1) = p(y, s0) * p(s1): shell 1 independent of everything
    rng = make_rng(17)
    base = rng.random((2, 2))
    base /= base.sum()
    s1 = np.array([0.3, 0.7])
    joint = base[:, :, None] * s1[None, None, :]
    m = identity_maps_model(joint)
    assert information_homophily(m, 0) == pytest.approx(0.0, abs=1e-12)


def test_maximal_overlap_forces_zero_gain():
    # Y = S_0 = S_1 uniform: the new shell carries nothing beyond the old
    joint = np.zeros((2, 2, 2))
    joint[0, 0, 0] = 0.5
    joint[1, 1, 1] = 0.5
    m = identity_maps_model(joint)
    gain, bound = gain_bound(m, 0)
    assert bound == pytest.approx(0.0, abs=1e-12)
    assert gain == pytest.approx(0.0, abs=1e-12)


def test_gain_bound_never_violated_on_random_models():
    for seed in range(30):
        m = random_model(2 + seed % 2, 2, 2, 3, seed=400 + seed)
        j = push_forward(m)
        for i in range(m.num_layers):
            if i + 1 <= m.max_shell:
                gain, bound = gain_bound(m, i, j)
                assert gain <= bound + 1e-9


def test_processing_inequality_anchor_chain():
    for seed in range(20):
        m = random_model(3, 2, 2, 3, seed=500 + seed)
        j = push_forward(m)
        for i in range(1, m.num_layers + 1):
            shells = [("S", k) for k in range(min(i, m.max_shell) + 1)]
            assert mi(j, Y, [anchor_var(i)]) <= mi(j, Y, shells) + 1e-9


# ---------------------------------------------------------------------------
# random models and the campaign
# ---------------------------------------------------------------------------

def test_random_model_deterministic():
    a = random_model(3, 2, 2, 3, seed=42)
    b = random_model(3, 2, 2, 3, seed=42)
    assert np.array_equal(a.joint, b.joint)
    for ma, mb in zip(a.layer_maps, b.layer_maps):
        for xa, xb in zip(ma, mb):
            assert np.array_equal(xa, xb)


def test_random_model_state_space_bounds():
    m = random_model(2, 2, 2, 2, seed=1)
    j = push_forward(m)
    assert j.assignments.shape[0] <= 2**7
    assert m.joint.sum() == pytest.approx(1.0, abs=1e-12)


def test_random_model_overflow_guard():
    with pytest.raises(ValueError, match="state-space overflow"):
        random_model(10, 20, 1, 10, seed=0)


def test_verify_theory_small_campaign_passes():
    report = verify_theory(25, seed=3)
    assert report.passed
    assert report.models == 25
    assert report.max_balance_residual < 1e-9
    assert any("PASS" in line for line in report.lines())
