"""Message-passing backbones (plain GCN and residual GCN), training loop,
ensembles, and MC-dropout inference.

Both architectures expose every intermediate node-embedding matrix so that
post-hoc density estimators can consume the full stack, not just the logits.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph, SplitMasks
from .seeding import make_rng
from .tensor import (
    ParamSet,
    assert_finite,
    adam_step,
    dropout,
    dropout_backward,
    layer_norm,
    layer_norm_backward,
    relu,
    relu_backward,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)


@dataclass
class ArchConfig:
    """Backbone architecture descriptor.

    kind "gcn" is the classic convolution stack; "res_gcn" adds the input
    MLP, pre-aggregation layer norm, two-layer combine MLPs, residual
    connections, and a final layer norm before the classifier head.
    """

    kind: str = "res_gcn"
    layers: int = 2
    hidden_dim: int = 64
    dropout: float = 0.2
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in ("gcn", "res_gcn"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 1e-4
    max_epochs: int = 1000
    patience: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EmbeddingStack:
    """Per-layer node embeddings H^(0)=X .. H^(L), plus logits and probs."""

    layers: list
    logits: np.ndarray
    probs: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.layers) - 1


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """Symmetrically normalized adjacency with self loops:
    D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of A + I."""
    a_tilde = (g.adjacency + sp.identity(g.num_nodes, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d_half = sp.diags(inv_sqrt)
    return (d_half @ a_tilde @ d_half).tocsr()


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


class MpnnModel:
    """A GCN or residual GCN over a fixed feature/class signature."""

    def __init__(self, cfg: ArchConfig, in_dim: int, num_classes: int, seed: int = 0):
        self.cfg = cfg
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.params = ParamSet()
        rng = make_rng(seed)
        h = cfg.hidden_dim
        if cfg.kind == "gcn":
            dims = [in_dim] + [h] * (cfg.layers - 1) + [num_classes]
            for l in range(1, cfg.layers + 1):
                self.params.add(f"w{l}", _glorot(rng, dims[l - 1], dims[l]))
                self.params.add(f"b{l}", np.zeros((1, dims[l])))
        else:
            self.params.add("w_in", _glorot(rng, in_dim, h))
            self.params.add("b_in", np.zeros((1, h)))
            for l in range(1, cfg.layers + 1):
                self.params.add(f"ln{l}_g", np.ones((1, h)))
                self.params.add(f"ln{l}_b", np.zeros((1, h)))
                self.params.add(f"w{l}_1", _glorot(rng, h, h))
                self.params.add(f"b{l}_1", np.zeros((1, h)))
                self.params.add(f"w{l}_2", _glorot(rng, h, h))
                self.params.add(f"b{l}_2", np.zeros((1, h)))
            self.params.add("ln_out_g", np.ones((1, h)))
            self.params.add("ln_out_b", np.zeros((1, h)))
            self.params.add("w_head", _glorot(rng, h, num_classes))
            self.params.add("b_head", np.zeros((1, num_classes)))

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def forward(self, ahat, x, training=False, rng=None) -> EmbeddingStack:
        stack, _ = self._forward(ahat, x, training, rng)
        return stack

    def _forward(self, ahat, x, training, rng):
        if x.shape[1] != self.in_dim:
            raise ValueError(f"feature dim {x.shape[1]} does not match model ({self.in_dim})")
        if self.cfg.kind == "gcn":
            stack, cache = self._forward_gcn(ahat, x, training, rng)
        else:
            stack, cache = self._forward_res(ahat, x, training, rng)
        assert_finite(stack.logits, "logits")
        return stack, cache

    def _forward_gcn(self, ahat, x, training, rng):
        p = self.params
        cfg = self.cfg
        layers = [x]
        cache = []
        h = x
        logits = None
        for l in range(1, cfg.layers + 1):
            hd, scale = dropout(h, cfg.dropout, training, rng)
            agg = ahat @ hd
            z = agg @ p[f"w{l}"].data + p[f"b{l}"].data
            cache.append({"agg": agg, "scale": scale, "z": z, "l": l})
            if l < cfg.layers:
                h = relu(z)
                layers.append(h)
            else:
                logits = z
                layers.append(z)
        probs = softmax(logits)
        return EmbeddingStack(layers, logits, probs), cache

    def _forward_res(self, ahat, x, training, rng):
        p = self.params
        cfg = self.cfg
        z_in = x @ p["w_in"].data + p["b_in"].data
        r_in = relu(z_in)
        h, scale_in = dropout(r_in, cfg.dropout, training, rng)
        layers = [x]
        blocks = []
        for l in range(1, cfg.layers + 1):
            t, ln_cache = layer_norm(h, p[f"ln{l}_g"].data, p[f"ln{l}_b"].data, cfg.ln_eps)
            agg = ahat @ t
            m1 = agg @ p[f"w{l}_1"].data + p[f"b{l}_1"].data
            a1 = relu(m1)
            a1d, scale = dropout(a1, cfg.dropout, training, rng)
            m2 = a1d @ p[f"w{l}_2"].data + p[f"b{l}_2"].data
            h = h + m2
            layers.append(h)
            blocks.append({
                "ln_cache": ln_cache, "agg": agg, "m1": m1,
                "a1d": a1d, "scale": scale, "l": l,
            })
        hf, ln_out_cache = layer_norm(h, p["ln_out_g"].data, p["ln_out_b"].data, cfg.ln_eps)
        logits = hf @ p["w_head"].data + p["b_head"].data
        probs = softmax(logits)
        cache = {
            "x": x, "z_in": z_in, "scale_in": scale_in,
            "blocks": blocks, "hf": hf, "ln_out_cache": ln_out_cache,
        }
        return EmbeddingStack(layers, logits, probs), cache

    def loss_and_grads(self, ahat, x, labels, mask, training=True, rng=None):
        """Masked cross-entropy loss; fills parameter gradients."""
        self.params.zero_grad()
        stack, cache = self._forward(ahat, x, training, rng)
        loss, probs = softmax_cross_entropy(stack.logits, labels, mask)
        dlogits = softmax_cross_entropy_backward(probs, labels, mask)
        if self.cfg.kind == "gcn":
            self._backward_gcn(ahat, dlogits, cache)
        else:
            self._backward_res(ahat, dlogits, cache)
        return loss

    def _backward_gcn(self, ahat, dlogits, cache):
        p = self.params
        dz = dlogits
        for entry in reversed(cache):
            l = entry["l"]
            p[f"w{l}"].grad += entry["agg"].T @ dz
            p[f"b{l}"].grad += dz.sum(axis=0, keepdims=True)
            if l > 1:
                dagg = dz @ p[f"w{l}"].data.T
                dhd = ahat @ dagg  # ahat is symmetric
                dh = dropout_backward(dhd, entry["scale"])
                prev = cache[l - 2]
                dz = relu_backward(dh, prev["z"])

    def _backward_res(self, ahat, dlogits, cache):
        p = self.params
        p["w_head"].grad += cache["hf"].T @ dlogits
        p["b_head"].grad += dlogits.sum(axis=0, keepdims=True)
        dhf = dlogits @ p["w_head"].data.T
        dh, dg, db = layer_norm_backward(dhf, cache["ln_out_cache"])
        p["ln_out_g"].grad += dg
        p["ln_out_b"].grad += db
        for entry in reversed(cache["blocks"]):
            l = entry["l"]
            dm2 = dh  # residual: dh flows to both the block and the carry
            p[f"w{l}_2"].grad += entry["a1d"].T @ dm2
            p[f"b{l}_2"].grad += dm2.sum(axis=0, keepdims=True)
            da1d = dm2 @ p[f"w{l}_2"].data.T
            da1 = dropout_backward(da1d, entry["scale"])
            dm1 = relu_backward(da1, entry["m1"])
            p[f"w{l}_1"].grad += entry["agg"].T @ dm1
            p[f"b{l}_1"].grad += dm1.sum(axis=0, keepdims=True)
            dagg = dm1 @ p[f"w{l}_1"].data.T
            dt = ahat @ dagg
            dln, dg, db = layer_norm_backward(dt, entry["ln_cache"])
            p[f"ln{l}_g"].grad += dg
            p[f"ln{l}_b"].grad += db
            dh = dh + dln
        dr = dropout_backward(dh, cache["scale_in"])
        dz_in = relu_backward(dr, cache["z_in"])
        p["w_in"].grad += cache["x"].T @ dz_in
        p["b_in"].grad += dz_in.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # (epoch, train_loss, val_acc)
    best_epoch: int = 0
    best_val_acc: float = 0.0

    def write_history_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_acc"])
            for epoch, loss, acc in self.history:
                writer.writerow([epoch, f"{loss:.10g}", f"{acc:.10g}"])


def accuracy(probs, labels, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    pred = probs[idx].argmax(axis=1)
    return float((pred == labels[idx]).mean())


def train(model: MpnnModel, g: Graph, masks: SplitMasks, tc: TrainConfig,
          ahat=None, labels=None) -> TrainResult:
    """Full-batch Adam on the masked cross entropy with early stopping.

    Validation accuracy is monitored each epoch; the parameters of the best
    epoch are restored before returning (ties keep the earlier epoch). Pass
    ``labels`` to train against a re-indexed label vector, e.g. after
    holding out classes.

    Stops after ``patience`` consecutive epochs without a new best, or at
    ``max_epochs``.
    """
    if masks.train.size == 0:
        raise ValueError("training mask is empty")
    if ahat is None:
        ahat = normalized_adjacency(g)
    if labels is None:
        labels = g.labels
    x = g.features
    rng = make_rng(tc.seed)

    result = TrainResult()
    best_state = model.params.state()
    best_acc = -np.inf
    stale = 0
    for epoch in range(1, tc.max_epochs + 1):
        loss = model.loss_and_grads(ahat, x, labels, masks.train, training=True, rng=rng)
        adam_step(model.params, tc.lr, weight_decay=tc.weight_decay)
        stack = model.forward(ahat, x, training=False)
        val_acc = accuracy(stack.probs, labels, masks.val) if masks.val.size else 0.0
        result.history.append((epoch, loss, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = model.params.state()
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    model.params.load_state(best_state)
    result.best_val_acc = float(best_acc)
    return result


def ensemble_predict(models, ahat, x) -> list:
    """Probability matrices of independently trained ensemble members."""
    if len(models) < 2:
        raise ValueError("an ensemble needs at least 2 members")
    return [m.forward(ahat, x, training=False).probs for m in models]


def mc_dropout_predict(model: MpnnModel, ahat, x, samples: int = 50, seed: int = 0) -> list:
    """Probability matrices from repeated forwards with dropout active."""
    if samples < 2:
        raise ValueError("MC dropout needs at least 2 samples")
    rng = make_rng(seed)
    return [model.forward(ahat, x, training=True, rng=rng).probs for _ in range(samples)]
