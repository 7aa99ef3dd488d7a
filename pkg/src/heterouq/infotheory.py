"""Exact information accounting on finite generative models.

A finite generative model couples a label with the shells of an ego graph
through an explicit joint table, and processes the shells with deterministic
per-layer maps that mirror message passing: each shell's next state depends
on itself and its adjacent shells. Because the maps are deterministic, the
full joint over label, shells, and every hidden state stays supported on the
base outcomes and can be enumerated exactly. All information quantities are
plug-in values in nats computed from that enumeration.

Variables are addressed as tuples: ``("Y",)`` for the label, ``("S", k)``
for shell k, and ``("H", i, k)`` for shell k's state after layer i. The
anchor node's representation after layer i is ``("H", i, 0)`` (layer 0 being
the raw shell ``("S", 0)``).
"""

from dataclasses import dataclass

import numpy as np

from .seeding import make_rng

MAX_BASE_STATES = 10**6

BALANCE_TOL = 1e-9
BOUND_TOL = 1e-9
NONNEG_TOL = 1e-12
CHAIN_TOL = 1e-12


@dataclass(frozen=True)
class FiniteGenerativeModel:
    """Joint distribution over (label, shells) plus deterministic layer maps.

    joint has shape ``(label_size, *shell_sizes)`` and sums to one.
    ``layer_maps[i][k]`` maps shell k's neighborhood at layer i (shells
    k-1, k, k+1, clipped at the boundary) to its next state; the codomain
    sizes are ``hidden_sizes[i][k]``.
    """

    label_size: int
    shell_sizes: tuple
    joint: np.ndarray
    layer_maps: tuple
    hidden_sizes: tuple

    @property
    def num_shells(self) -> int:
        return len(self.shell_sizes)

    @property
    def num_layers(self) -> int:
        return len(self.layer_maps)

    @property
    def max_shell(self) -> int:
        return self.num_shells - 1

    def validate(self):
        total = float(self.joint.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"joint table sums to {total}, not 1")
        if (self.joint < 0).any():
            raise ValueError("joint table has negative entries")
        if self.joint.shape != (self.label_size, *self.shell_sizes):
            raise ValueError("joint table shape does not match alphabets")
        for i, maps in enumerate(self.layer_maps):
            if len(maps) != self.num_shells:
                raise ValueError(f"layer {i + 1} needs one map per shell")


def anchor_var(layer: int):
    """The anchor node's representation after ``layer`` MPNN iterations."""
    return ("S", 0) if layer == 0 else ("H", layer, 0)


def shells_upto(model: FiniteGenerativeModel, i: int) -> list:
    """Shell variables at distance 0..i, clipped to the shells that exist."""
    return [("S", k) for k in range(min(i, model.max_shell) + 1)]


def shell_beyond(model: FiniteGenerativeModel, i: int) -> list:
    """Shell i+1 as a singleton group, or empty once the graph is exhausted."""
    return [("S", i + 1)] if i + 1 <= model.max_shell else []


@dataclass(frozen=True)
class EnumeratedJoint:
    """Exact joint over named finite variables, stored as outcome rows."""

    names: tuple
    assignments: np.ndarray  # (num_outcomes, num_vars) ints
    probs: np.ndarray        # (num_outcomes,), positive, sums to 1

    def columns(self, group) -> list[int]:
        index = {name: pos for pos, name in enumerate(self.names)}
        missing = [v for v in group if v not in index]
        if missing:
            raise KeyError(f"unknown variables {missing}")
        return [index[v] for v in group]


def push_forward(model: FiniteGenerativeModel) -> EnumeratedJoint:
    """Extend the base joint over all hidden variables.

    Deterministic maps keep the support on the base outcomes, so the result
    has one row per base outcome of positive probability.
    """
    model.validate()
    probs = model.joint.ravel()
    keep = probs > 0.0
    grid = np.indices(model.joint.shape).reshape(len(model.joint.shape), -1).T
    grid = grid[keep]
    probs = probs[keep]

    names = [("Y",)] + [("S", k) for k in range(model.num_shells)]
    columns = [grid[:, j] for j in range(grid.shape[1])]

    state = columns[1:]  # shell values, updated layer by layer
    for i, maps in enumerate(model.layer_maps, start=1):
        new_state = []
        for k, fmap in enumerate(maps):
            inputs = _neighborhood(state, k)
            expected = fmap.ndim
            if len(inputs) != expected:
                raise ValueError(
                    f"layer {i} shell {k}: map arity {expected} != {len(inputs)} inputs"
                )
            new_state.append(fmap[tuple(inputs)])
        for k, col in enumerate(new_state):
            names.append(("H", i, k))
            columns.append(col)
        state = new_state

    assignments = np.stack(columns, axis=1)
    return EnumeratedJoint(tuple(names), assignments, probs)


def _neighborhood(state, k):
    lo = max(k - 1, 0)
    hi = min(k + 1, len(state) - 1)
    return state[lo:hi + 1]


# ---------------------------------------------------------------------------
# plug-in information quantities
# ---------------------------------------------------------------------------

def _group_ids(joint: EnumeratedJoint, group):
    cols = joint.columns(group)
    sub = joint.assignments[:, cols]
    _, inverse = np.unique(sub, axis=0, return_inverse=True)
    return inverse, int(inverse.max()) + 1


def _check_disjoint(*groups):
    seen = set()
    for group in groups:
        for v in group:
            if v in seen:
                raise ValueError(f"variable groups overlap on {v}")
            seen.add(v)


def mi(joint: EnumeratedJoint, group_a, group_b) -> float:
    """Mutual information I(A; B) in nats; empty groups carry no information."""
    if not group_a or not group_b:
        return 0.0
    _check_disjoint(group_a, group_b)
    ia, na = _group_ids(joint, group_a)
    ib, nb = _group_ids(joint, group_b)
    pa = np.bincount(ia, weights=joint.probs, minlength=na)
    pb = np.bincount(ib, weights=joint.probs, minlength=nb)
    key = ia * nb + ib
    pab = np.bincount(key, weights=joint.probs, minlength=na * nb)
    support = pab > 0.0
    keys = np.flatnonzero(support)
    p = pab[support]
    return float((p * np.log(p / (pa[keys // nb] * pb[keys % nb]))).sum())


def cmi(joint: EnumeratedJoint, group_a, group_b, group_c) -> float:
    """Conditional mutual information I(A; B | C) in nats.

    Variables of A or B that also appear in C are constants given C and are
    dropped; A and B themselves must stay disjoint.
    """
    if not group_c:
        return mi(joint, group_a, group_b)
    conditioned = set(group_c)
    group_a = [v for v in group_a if v not in conditioned]
    group_b = [v for v in group_b if v not in conditioned]
    if not group_a or not group_b:
        return 0.0
    _check_disjoint(group_a, group_b)
    ia, na = _group_ids(joint, group_a)
    ib, nb = _group_ids(joint, group_b)
    ic, nc = _group_ids(joint, group_c)
    pc = np.bincount(ic, weights=joint.probs, minlength=nc)
    pac = np.bincount(ia * nc + ic, weights=joint.probs, minlength=na * nc)
    pbc = np.bincount(ib * nc + ic, weights=joint.probs, minlength=nb * nc)
    key = (ia * nb + ib) * nc + ic
    pabc = np.bincount(key, weights=joint.probs, minlength=na * nb * nc)
    support = pabc > 0.0
    keys = np.flatnonzero(support)
    p = pabc[support]
    a = keys // (nb * nc)
    b = (keys // nc) % nb
    c = keys % nc
    return float((p * np.log(p * pc[c] / (pac[a * nc + c] * pbc[b * nc + c]))).sum())


# ---------------------------------------------------------------------------
# layer-wise information accounting
# ---------------------------------------------------------------------------

def information_balance(model: FiniteGenerativeModel, i: int,
                        joint: EnumeratedJoint | None = None) -> dict:
    """Decompose the label-information change across layer i+1.

    Returns the label information held by the anchor representation before
    and after the layer, the relative-information term (how much of the
    already-seen shells' label information the layer loses, negative when
    neighbors recover it), the receptive-field gain realized from the newly
    reached shell, and the residual of

        I(Y; T_{i+1}) = I(Y; T_i) - relative_info + info_gain

    which is zero up to float rounding. ``gain_identity`` restates the gain
    as I(Y; T_{i+1} | S_{0:i}).
    """
    if not 0 <= i < model.num_layers:
        raise ValueError(f"layer index {i} out of range [0, {model.num_layers})")
    if joint is None:
        joint = push_forward(model)
    y = [("Y",)]
    t_i = [anchor_var(i)]
    t_next = [anchor_var(i + 1)]
    seen = shells_upto(model, i)
    new = shell_beyond(model, i)

    label_info = mi(joint, y, t_i)
    label_info_next = mi(joint, y, t_next)
    relative_info = cmi(joint, y, seen, t_next) - cmi(joint, y, seen, t_i)
    info_gain = cmi(joint, y, new, seen) - cmi(joint, y, new, seen + t_next)
    residual = label_info_next - label_info + relative_info - info_gain
    return {
        "label_info": label_info,
        "label_info_next": label_info_next,
        "relative_info": relative_info,
        "info_gain": info_gain,
        "residual": residual,
        "label_info_input": mi(joint, y, seen),
        "gain_identity": cmi(joint, y, t_next, seen),
    }


def information_homophily(model: FiniteGenerativeModel, i: int,
                          joint: EnumeratedJoint | None = None) -> float:
    """Label-relevant information shared between shell i+1 and shells 0..i:
    I(S_{i+1}; S_{0:i}) - I(S_{i+1}; S_{0:i} | Y)."""
    if not 0 <= i + 1 <= model.max_shell:
        raise ValueError(f"shell {i + 1} does not exist")
    if joint is None:
        joint = push_forward(model)
    new = [("S", i + 1)]
    seen = shells_upto(model, i)
    return mi(joint, new, seen) - cmi(joint, new, seen, [("Y",)])


def gain_bound(model: FiniteGenerativeModel, i: int,
               joint: EnumeratedJoint | None = None) -> tuple[float, float]:
    """Return (info_gain, bound) where the realized receptive-field gain is
    bounded by the new shell's label information minus the homophily:
    gain <= I(Y; S_{i+1}) - homophily_{i+1}."""
    if joint is None:
        joint = push_forward(model)
    gain = information_balance(model, i, joint)["info_gain"]
    bound = (mi(joint, [("Y",)], [("S", i + 1)])
             - information_homophily(model, i, joint))
    return gain, bound


# ---------------------------------------------------------------------------
# random models and the verification campaign
# ---------------------------------------------------------------------------

def random_model(label_size: int, num_shells: int, num_layers: int,
                 max_alphabet: int, seed: int = 0) -> FiniteGenerativeModel:
    """Random strictly-positive joint with uniformly random layer maps.

    Hidden alphabets are drawn in [1, max_alphabet], so layers routinely
    destroy information (size-1 codomains are constant maps).
    """
    rng = make_rng(seed)
    shell_sizes = tuple(int(rng.integers(1, max_alphabet + 1)) for _ in range(num_shells + 1))
    base_states = label_size * int(np.prod(shell_sizes))
    if base_states > MAX_BASE_STATES:
        raise ValueError(f"state-space overflow: {base_states} base states")

    joint = rng.random((label_size, *shell_sizes)) + 1e-3
    joint /= joint.sum()

    prev_sizes = list(shell_sizes)
    layer_maps = []
    hidden_sizes = []
    for _ in range(num_layers):
        maps = []
        sizes = []
        for k in range(num_shells + 1):
            lo = max(k - 1, 0)
            hi = min(k + 1, num_shells)
            dom = tuple(prev_sizes[lo:hi + 1])
            codomain = int(rng.integers(1, max_alphabet + 1))
            maps.append(rng.integers(0, codomain, dom))
            sizes.append(codomain)
        layer_maps.append(tuple(maps))
        hidden_sizes.append(tuple(sizes))
        prev_sizes = sizes
    return FiniteGenerativeModel(label_size, shell_sizes, joint,
                                 tuple(layer_maps), tuple(hidden_sizes))


@dataclass
class TheoryReport:
    """Worst-case deviations observed across a verification campaign."""

    models: int = 0
    layers_checked: int = 0
    max_balance_residual: float = 0.0
    max_relative_info_bound_violation: float = -np.inf
    min_info_gain: float = np.inf
    max_gain_identity_gap: float = 0.0
    max_homophily_bound_violation: float = -np.inf
    max_chain_rule_gap: float = 0.0
    max_dpi_violation: float = -np.inf
    max_mi_negativity: float = -np.inf

    @property
    def passed(self) -> bool:
        return (
            self.max_balance_residual < BALANCE_TOL
            and self.max_relative_info_bound_violation < BOUND_TOL
            and self.min_info_gain > -NONNEG_TOL
            and self.max_gain_identity_gap < BALANCE_TOL
            and self.max_homophily_bound_violation < BOUND_TOL
            and self.max_chain_rule_gap < CHAIN_TOL
            and self.max_dpi_violation < BOUND_TOL
            and self.max_mi_negativity < NONNEG_TOL
        )

    def lines(self) -> list[str]:
        def row(name, value, limit, ok):
            flag = "pass" if ok else "FAIL"
            return f"  {name:<42} {value: .3e}  (limit {limit:.0e})  [{flag}]"

        out = [f"finite-model verification: {self.models} models, "
               f"{self.layers_checked} layer checks"]
        out.append(row("max |balance residual|", self.max_balance_residual,
                       BALANCE_TOL, self.max_balance_residual < BALANCE_TOL))
        out.append(row("max relative-info bound violation",
                       self.max_relative_info_bound_violation, BOUND_TOL,
                       self.max_relative_info_bound_violation < BOUND_TOL))
        out.append(row("min info gain", self.min_info_gain, NONNEG_TOL,
                       self.min_info_gain > -NONNEG_TOL))
        out.append(row("max gain-identity gap", self.max_gain_identity_gap,
                       BALANCE_TOL, self.max_gain_identity_gap < BALANCE_TOL))
        out.append(row("max homophily bound violation",
                       self.max_homophily_bound_violation, BOUND_TOL,
                       self.max_homophily_bound_violation < BOUND_TOL))
        out.append(row("max chain-rule gap", self.max_chain_rule_gap,
                       CHAIN_TOL, self.max_chain_rule_gap < CHAIN_TOL))
        out.append(row("max processing-inequality violation",
                       self.max_dpi_violation, BOUND_TOL,
                       self.max_dpi_violation < BOUND_TOL))
        out.append(row("max MI negativity", self.max_mi_negativity,
                       NONNEG_TOL, self.max_mi_negativity < NONNEG_TOL))
        out.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return out


def verify_theory(num_models: int, seed: int = 0, max_alphabet: int = 3,
                  max_shells: int = 2, max_layers: int = 3,
                  max_label_size: int = 3) -> TheoryReport:
    """Check every layer-wise identity and bound on random finite models."""
    rng = make_rng(seed)
    report = TheoryReport()
    for m in range(num_models):
        label_size = int(rng.integers(2, max_label_size + 1))
        num_shells = int(rng.integers(1, max_shells + 1))
        num_layers = int(rng.integers(1, max_layers + 1))
        model = random_model(label_size, num_shells, num_layers, max_alphabet,
                             seed=int(rng.integers(2**62)))
        joint = push_forward(model)
        report.models += 1

        for i in range(model.num_layers):
            terms = information_balance(model, i, joint)
            report.layers_checked += 1
            report.max_balance_residual = max(
                report.max_balance_residual, abs(terms["residual"]))
            report.max_relative_info_bound_violation = max(
                report.max_relative_info_bound_violation,
                -terms["relative_info"] - terms["label_info_input"])
            report.min_info_gain = min(report.min_info_gain, terms["info_gain"])
            report.max_gain_identity_gap = max(
                report.max_gain_identity_gap,
                abs(terms["info_gain"] - terms["gain_identity"]))
            report.max_dpi_violation = max(
                report.max_dpi_violation,
                terms["label_info"] - terms["label_info_input"])
            if i + 1 <= model.max_shell:
                gain, bound = gain_bound(model, i, joint)
                report.max_homophily_bound_violation = max(
                    report.max_homophily_bound_violation, gain - bound)

        # chain rule I(A; B, C) = I(A; B) + I(A; C | B) on random groups
        pool = [name for name in joint.names if name != ("Y",)]
        picks = rng.choice(len(pool), size=min(2, len(pool)), replace=False)
        group_b = [pool[int(picks[0])]]
        group_c = [pool[int(picks[-1])]] if len(picks) > 1 else []
        if group_c and group_c != group_b:
            lhs = mi(joint, [("Y",)], group_b + group_c)
            rhs = mi(joint, [("Y",)], group_b) + cmi(joint, [("Y",)], group_c, group_b)
            report.max_chain_rule_gap = max(report.max_chain_rule_gap, abs(lhs - rhs))

        sym_gap = abs(mi(joint, [("Y",)], group_b) - mi(joint, group_b, [("Y",)]))
        report.max_chain_rule_gap = max(report.max_chain_rule_gap, sym_gap)
        report.max_mi_negativity = max(
            report.max_mi_negativity, -mi(joint, [("Y",)], group_b))
    return report
