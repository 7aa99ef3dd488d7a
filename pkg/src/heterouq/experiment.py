"""Config-driven experiment harness.

A run grid is (dataset split) x (model initialization). Every cell derives
its seeds from the master seed through :func:`heterouq.seeding.derive_seed`,
so any subset of the grid reproduces in isolation and a stored manifest
replays to byte-identical result files.
"""

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import estimators as est
from .graph import Graph, SplitMasks, load_dataset, make_moons_graph, make_splits
from .metrics import (
    SingleClassError,
    auc_pr,
    auc_roc,
    brier,
    ece,
    misclassification_auc,
    reliability_curve,
)
from .models import (
    ArchConfig,
    MpnnModel,
    TrainConfig,
    accuracy,
    mc_dropout_predict,
    normalized_adjacency,
    train,
)
from .seeding import derive_seed
from .shifts import ShiftSpec, apply_feature_noise, apply_loc

RESULT_COLUMNS = [
    "estimator", "shift", "runs",
    "ood_auc_roc_epi_mean", "ood_auc_roc_epi_std",
    "ood_auc_pr_epi_mean", "ood_auc_pr_epi_std",
    "ood_auc_roc_alea_mean", "ood_auc_roc_alea_std",
    "ood_auc_pr_alea_mean", "ood_auc_pr_alea_std",
    "id_accuracy_mean", "id_accuracy_std",
    "miscls_auc_epi_mean", "miscls_auc_epi_std",
    "miscls_auc_alea_mean", "miscls_auc_alea_std",
    "ece_mean", "ece_std",
    "brier_mean", "brier_std",
]

HYPERPARAMETER_GRID = {
    "hidden_dim": [64, 512],
    "dropout": [0.2, 0.5],
    "lr": [0.01, 0.001],
    "weight_decay": [0.0, 1e-4],
}


@dataclass
class ExperimentConfig:
    """Mirror of the JSON config file; see README for the schema."""

    seed: int = 0
    dataset: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    shift: dict = field(default_factory=dict)
    estimators: list = field(default_factory=lambda: [{"name": "jlde"}, {"name": "energy"}])
    repeats: dict = field(default_factory=lambda: {"splits": 1, "inits": 1})
    output: str = "results"
    reliability: bool = False

    @staticmethod
    def from_json(path) -> "ExperimentConfig":
        payload = json.loads(Path(path).read_text())
        return ExperimentConfig.from_dict(payload)

    @staticmethod
    def from_dict(payload: dict) -> "ExperimentConfig":
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = ExperimentConfig(**payload)
        if int(cfg.repeats.get("splits", 1)) < 1 or int(cfg.repeats.get("inits", 1)) < 1:
            raise ValueError("repeats must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": self.dataset,
            "arch": self.arch,
            "train": self.train,
            "split": self.split,
            "shift": self.shift,
            "estimators": self.estimators,
            "repeats": self.repeats,
            "output": self.output,
            "reliability": self.reliability,
        }

    def arch_config(self, **overrides) -> ArchConfig:
        return ArchConfig(**{**self.arch, **overrides})

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        merged = {"max_epochs": 300, **self.train, **overrides}
        return TrainConfig(seed=seed, **merged)


def build_dataset(cfg: ExperimentConfig, seed: int):
    """Materialize the configured dataset. Synthetic datasets are re-drawn
    from ``seed``; directory datasets are loaded as-is."""
    if "path" in cfg.dataset:
        return load_dataset(cfg.dataset["path"])
    if "moons" in cfg.dataset:
        opts = dict(cfg.dataset["moons"])
        opts.setdefault("per_class_train", int(cfg.split.get("per_class_train", 20)))
        opts.setdefault("per_class_val", int(cfg.split.get("per_class_val", 20)))
        return make_moons_graph(seed=seed, **opts)
    raise ValueError("dataset config needs either 'path' or 'moons'")


def _resolve_shift(cfg: ExperimentConfig, seed: int) -> ShiftSpec:
    opts = dict(cfg.shift)
    kind = opts.pop("kind", "loc")
    classes = opts.pop("classes", None)
    spec = ShiftSpec(
        kind=kind,
        loc_classes=tuple(classes) if classes is not None else None,
        loc_policy=opts.pop("policy", "last"),
        loc_count=int(opts.pop("count", 1)),
        ood_fraction=float(opts.pop("ood_fraction", 0.5)),
        seed=seed,
    )
    if opts:
        raise ValueError(f"unknown shift options: {sorted(opts)}")
    return spec


@dataclass
class RunContext:
    """Everything a single grid cell produced, for estimator scoring."""

    graph: Graph
    ahat: object
    labels: np.ndarray
    masks: SplitMasks
    model: MpnnModel
    stack: object
    ood_nodes: np.ndarray
    id_eval_nodes: np.ndarray
    num_classes: int
    split_idx: int
    init_idx: int


def prepare_cell(cfg: ExperimentConfig, split_idx: int) -> dict:
    """Dataset + split + shift for one split index (shared across inits)."""
    data_seed = derive_seed(cfg.seed, "data", split_idx)
    g, file_masks = build_dataset(cfg, data_seed)

    if cfg.split.get("use_file_splits") and file_masks is not None:
        masks = file_masks
    elif "moons" in cfg.dataset and file_masks is not None:
        masks = file_masks  # the generator already stratified over the regular classes
    else:
        masks = make_splits(
            g,
            per_class_train=int(cfg.split.get("per_class_train", 20)),
            per_class_val=int(cfg.split.get("per_class_val", 20)),
            seed=derive_seed(cfg.seed, "split", split_idx),
        )

    spec = _resolve_shift(cfg, derive_seed(cfg.seed, "shift", split_idx))
    if spec.kind == "loc":
        loc = apply_loc(g, masks, spec)
        return {
            "graph": g, "masks": loc.masks, "labels": loc.labels,
            "ood": loc.ood_nodes, "id_eval": loc.id_eval_nodes,
            "num_classes": loc.num_classes,
        }
    shifted = apply_feature_noise(g, masks, spec)
    return {
        "graph": shifted.graph, "masks": masks, "labels": g.labels,
        "ood": shifted.ood_nodes, "id_eval": shifted.id_eval_nodes,
        "num_classes": g.num_classes,
    }


def run_cell(cfg: ExperimentConfig, cell: dict, split_idx: int, init_idx: int) -> RunContext:
    """Train the backbone for one (split, init) grid cell."""
    g = cell["graph"]
    arch = cfg.arch_config()
    model = MpnnModel(arch, g.features.shape[1], cell["num_classes"],
                      seed=derive_seed(cfg.seed, "init", split_idx, init_idx))
    ahat = normalized_adjacency(g)
    tc = cfg.train_config(seed=derive_seed(cfg.seed, "trainer", split_idx, init_idx))
    train(model, g, cell["masks"], tc, ahat=ahat, labels=cell["labels"])
    stack = model.forward(ahat, g.features, training=False)
    return RunContext(g, ahat, cell["labels"], cell["masks"], model, stack,
                      cell["ood"], cell["id_eval"], cell["num_classes"],
                      split_idx, init_idx)


def _estimator_scores(ctx: RunContext, spec: dict, cfg: ExperimentConfig) -> np.ndarray:
    """Epistemic scores for every node under one estimator spec."""
    name = spec.get("name")
    opts = {k: v for k, v in spec.items() if k != "name"}
    if name == "jlde":
        jcfg = est.JldeConfig(**opts)
        fitted = est.fit_jlde(ctx.stack, ctx.masks, jcfg)
        return est.score_jlde(fitted, ctx.stack)
    if name == "energy":
        return est.score_energy(ctx.stack)
    if name == "mog":
        density = est.fit_mog(ctx.stack, ctx.masks, ctx.labels,
                              est.JldeConfig(**opts) if opts else None)
        return density.score(ctx.stack)
    if name == "kde":
        bandwidth = opts.pop("bandwidth", None)
        density = est.fit_kde(ctx.stack, ctx.masks, bandwidth,
                              est.JldeConfig(**opts) if opts else None)
        return density.score(ctx.stack)
    if name == "mcd":
        samples = int(opts.pop("samples", 50))
        seed = derive_seed(cfg.seed, "mcd", ctx.split_idx, ctx.init_idx)
        probs = mc_dropout_predict(ctx.model, ctx.ahat, ctx.graph.features,
                                   samples=samples, seed=seed)
        return est.score_sampling_variance(probs)
    if name == "ensemble":
        members = int(opts.pop("members", 10))
        probs = [ctx.stack.probs]
        for j in range(1, members):
            sibling = MpnnModel(
                cfg.arch_config(), ctx.graph.features.shape[1], ctx.num_classes,
                seed=derive_seed(cfg.seed, "init", ctx.split_idx, ctx.init_idx, "member", j))
            tc = cfg.train_config(seed=derive_seed(
                cfg.seed, "trainer", ctx.split_idx, ctx.init_idx, "member", j))
            train(sibling, ctx.graph, ctx.masks, tc, ahat=ctx.ahat, labels=ctx.labels)
            probs.append(sibling.forward(ctx.ahat, ctx.graph.features).probs)
        return est.score_sampling_variance(probs)
    raise ValueError(f"unknown estimator {name!r}")


def evaluate_cell(ctx: RunContext, cfg: ExperimentConfig) -> list[dict]:
    """Backbone-level metrics once, then one row per estimator."""
    stack = ctx.stack
    eval_nodes = np.concatenate([ctx.id_eval_nodes, ctx.ood_nodes])
    is_ood = np.concatenate([
        np.zeros(ctx.id_eval_nodes.size, dtype=bool),
        np.ones(ctx.ood_nodes.size, dtype=bool),
    ])
    alea_all = est.score_msp(stack)
    alea = alea_all[eval_nodes]

    id_idx = ctx.id_eval_nodes
    id_probs = stack.probs[id_idx]
    id_correct = id_probs.argmax(axis=1) == ctx.labels[id_idx]
    base = {
        "id_accuracy": accuracy(stack.probs, ctx.labels, id_idx),
        "ece": ece(id_probs, ctx.labels[id_idx]),
        "brier": brier(id_probs, ctx.labels[id_idx]),
        "ood_auc_roc_alea": auc_roc(alea, is_ood),
        "ood_auc_pr_alea": auc_pr(alea, is_ood),
    }
    try:
        base["miscls_auc_alea"] = misclassification_auc(alea_all[id_idx], id_correct)
    except SingleClassError:
        base["miscls_auc_alea"] = None

    rows = []
    for spec in cfg.estimators:
        epi_all = _estimator_scores(ctx, spec, cfg)
        epi = epi_all[eval_nodes]
        row = dict(base)
        row["estimator"] = spec.get("name")
        row["split"] = ctx.split_idx
        row["init"] = ctx.init_idx
        row["ood_auc_roc_epi"] = auc_roc(epi, is_ood)
        row["ood_auc_pr_epi"] = auc_pr(epi, is_ood)
        try:
            row["miscls_auc_epi"] = misclassification_auc(epi_all[id_idx], id_correct)
        except SingleClassError:
            row["miscls_auc_epi"] = None
        row["_epi_id_eval"] = epi_all[id_idx]
        row["_id_correct"] = id_correct
        rows.append(row)
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Execute the full grid; write results.csv and manifest.json.

    Returns {"rows": per-run rows, "aggregate": per-estimator rows}.
    """
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)

    splits = int(cfg.repeats.get("splits", 1))
    inits = int(cfg.repeats.get("inits", 1))
    raw_rows = []
    reliability_pool = {}
    for s in range(splits):
        cell = prepare_cell(cfg, s)
        for t in range(inits):
            ctx = run_cell(cfg, cell, s, t)
            for row in evaluate_cell(ctx, cfg):
                epi = row.pop("_epi_id_eval")
                correct = row.pop("_id_correct")
                reliability_pool.setdefault(row["estimator"], []).append((epi, correct))
                raw_rows.append(row)

    aggregate = aggregate_rows(raw_rows, shift=cfg.shift.get("kind", "loc"))
    write_results_csv(out / "results.csv", aggregate)
    write_manifest(out / "manifest.json", cfg, splits, inits)
    if cfg.reliability:
        write_reliability_csv(out / "reliability.csv", reliability_pool)
    return {"rows": raw_rows, "aggregate": aggregate}


def aggregate_rows(raw_rows, shift: str) -> list[dict]:
    """Mean and standard deviation per estimator across grid cells."""
    metric_names = [
        "ood_auc_roc_epi", "ood_auc_pr_epi", "ood_auc_roc_alea", "ood_auc_pr_alea",
        "id_accuracy", "miscls_auc_epi", "miscls_auc_alea", "ece", "brier",
    ]
    by_est = {}
    for row in raw_rows:
        by_est.setdefault(row["estimator"], []).append(row)
    aggregate = []
    for name, rows in by_est.items():
        agg = {"estimator": name, "shift": shift, "runs": len(rows)}
        for metric in metric_names:
            values = [r[metric] for r in rows if r.get(metric) is not None]
            if values:
                agg[f"{metric}_mean"] = statistics.fmean(values)
                agg[f"{metric}_std"] = statistics.pstdev(values) if len(values) > 1 else 0.0
            else:
                agg[f"{metric}_mean"] = None
                agg[f"{metric}_std"] = None
        aggregate.append(agg)
    return aggregate


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_results_csv(path, aggregate) -> None:
    """Schema is fixed: missing metrics become empty fields, columns never move."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in aggregate:
            writer.writerow([_format(row.get(col)) for col in RESULT_COLUMNS])


def write_manifest(path, cfg: ExperimentConfig, splits: int, inits: int) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "master_seed": cfg.seed,
        "seed_derivation": "sha256 of repr((master, tag, *indices)), low 63 bits",
        "cells": [
            {
                "split": s,
                "init": t,
                "data_seed": derive_seed(cfg.seed, "data", s),
                "split_seed": derive_seed(cfg.seed, "split", s),
                "shift_seed": derive_seed(cfg.seed, "shift", s),
                "init_seed": derive_seed(cfg.seed, "init", s, t),
                "trainer_seed": derive_seed(cfg.seed, "trainer", s, t),
            }
            for s in range(splits) for t in range(inits)
        ],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_reliability_csv(path, pool, bins: int = 20) -> None:
    """Pooled confidence-vs-accuracy curve per estimator; confidences are
    normalized per run before pooling."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "bin_center", "accuracy", "count"])
        for name, runs in sorted(pool.items()):
            confs, corrects = [], []
            for epi, correct in runs:
                c = -np.asarray(epi, dtype=np.float64)
                span = c.max() - c.min()
                confs.append((c - c.min()) / span if span > 0 else np.full_like(c, 0.5))
                corrects.append(np.asarray(correct, dtype=bool))
            conf = np.concatenate(confs)
            correct = np.concatenate(corrects)
            # reuse the binning by handing the pooled, already-normalized
            # confidences to the curve as negated scores
            for b in reliability_curve(-conf, correct, bins):
                writer.writerow([
                    name, f"{b.center:.10g}",
                    "" if np.isnan(b.accuracy) else f"{b.accuracy:.10g}",
                    b.count,
                ])


# ---------------------------------------------------------------------------
# layer ablation, homophily sweep, hyperparameter tuning
# ---------------------------------------------------------------------------

LAYER_SELECTIONS = ("single", "first_last", "all_add", "all_cat")


def run_layer_ablation(cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    """Evaluate JLDE layer selections under shared trained backbones.

    Produces one row per selection: single(1..L), first_last, all_add,
    all_cat. The backbone is trained once per grid cell and reused.
    """
    jlde_specs = [s for s in cfg.estimators if s.get("name") == "jlde"]
    if not jlde_specs:
        raise ValueError("layer ablation needs a jlde estimator in the config")
    base_opts = {k: v for k, v in jlde_specs[0].items() if k != "name"}
    base_opts.pop("layer_selection", None)
    base_opts.pop("single_layer", None)

    depth = int(cfg.arch.get("layers", ArchConfig().layers))
    variants = [("single", i) for i in range(1, depth + 1)]
    variants += [("first_last", None), ("all_add", None), ("all_cat", None)]

    splits = int(cfg.repeats.get("splits", 1))
    inits = int(cfg.repeats.get("inits", 1))
    scores = {v: [] for v in variants}
    for s in range(splits):
        cell = prepare_cell(cfg, s)
        for t in range(inits):
            ctx = run_cell(cfg, cell, s, t)
            eval_nodes = np.concatenate([ctx.id_eval_nodes, ctx.ood_nodes])
            is_ood = np.concatenate([
                np.zeros(ctx.id_eval_nodes.size, dtype=bool),
                np.ones(ctx.ood_nodes.size, dtype=bool),
            ])
            for selection, layer in variants:
                jcfg = est.JldeConfig(layer_selection=selection,
                                      single_layer=layer, **base_opts)
                fitted = est.fit_jlde(ctx.stack, ctx.masks, jcfg)
                epi = est.score_jlde(fitted, ctx.stack, eval_nodes)
                scores[(selection, layer)].append(auc_roc(epi, is_ood))

    rows = []
    for (selection, layer), values in scores.items():
        label = f"single({layer})" if selection == "single" else selection
        rows.append({
            "selection": label,
            "ood_auc_roc_mean": statistics.fmean(values),
            "ood_auc_roc_std": statistics.pstdev(values) if len(values) > 1 else 0.0,
            "runs": len(values),
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_simple_csv(out / "layer_ablation.csv",
                          ["selection", "ood_auc_roc_mean", "ood_auc_roc_std", "runs"], rows)
    return rows


def run_moons_sweep(h_values, cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    """Anomaly detection AUC on synthetic moons graphs across homophily levels.

    Per homophily value and seed: generate the graph with its anomalous
    class, hold that class out of supervision, train the backbone, and score
    JLDE against the logit-energy baseline.
    """
    h_values = list(h_values)
    if any(not 0.0 < h <= 1.0 for h in h_values):
        raise ValueError("homophily values must lie in (0, 1]")
    results = {}
    for h in h_values:
        sweep_cfg = ExperimentConfig.from_dict({
            **cfg.to_dict(),
            "dataset": {"moons": {**cfg.dataset.get("moons", {}), "homophily": h}},
            "shift": {"kind": "loc", "classes": [2]},
            "estimators": [s for s in cfg.estimators
                           if s.get("name") in ("jlde", "energy")]
                          or [{"name": "jlde"}, {"name": "energy"}],
        })
        outcome = _sweep_grid(sweep_cfg)
        for name, values in outcome.items():
            results[(h, name)] = values

    rows = []
    for (h, name), values in sorted(results.items()):
        rows.append({
            "homophily": h,
            "estimator": name,
            "ood_auc_roc_mean": statistics.fmean(values),
            "ood_auc_roc_std": statistics.pstdev(values) if len(values) > 1 else 0.0,
            "runs": len(values),
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_simple_csv(out / "moons_sweep.csv",
                          ["homophily", "estimator", "ood_auc_roc_mean",
                           "ood_auc_roc_std", "runs"], rows)
    return rows


def _sweep_grid(cfg: ExperimentConfig) -> dict:
    splits = int(cfg.repeats.get("splits", 1))
    inits = int(cfg.repeats.get("inits", 1))
    values = {}
    for s in range(splits):
        cell = prepare_cell(cfg, s)
        for t in range(inits):
            ctx = run_cell(cfg, cell, s, t)
            for row in evaluate_cell(ctx, cfg):
                row.pop("_epi_id_eval", None)
                row.pop("_id_correct", None)
                values.setdefault(row["estimator"], []).append(row["ood_auc_roc_epi"])
    return values


def tune(cfg: ExperimentConfig, grid: dict | None = None, out_dir=None) -> dict:
    """Grid search over backbone hyperparameters by validation accuracy.

    Uses the default benchmark grid unless ``grid`` overrides it. Returns
    {"best": config dict, "rows": per-cell rows}.
    """
    grid = grid or HYPERPARAMETER_GRID
    keys = sorted(grid)
    combos = [[]]
    for key in keys:
        combos = [c + [(key, v)] for c in combos for v in grid[key]]

    rows = []
    best = None
    for combo in combos:
        overrides = dict(combo)
        arch_over = {k: overrides[k] for k in ("hidden_dim", "dropout") if k in overrides}
        train_over = {k: overrides[k] for k in ("lr", "weight_decay") if k in overrides}
        cell_cfg = ExperimentConfig.from_dict({
            **cfg.to_dict(),
            "arch": {**cfg.arch, **arch_over},
            "train": {**cfg.train, **train_over},
        })
        accs = []
        for s in range(int(cfg.repeats.get("splits", 1))):
            cell = prepare_cell(cell_cfg, s)
            for t in range(int(cfg.repeats.get("inits", 1))):
                ctx = run_cell(cell_cfg, cell, s, t)
                accs.append(accuracy(ctx.stack.probs, ctx.labels, ctx.masks.val))
        row = {**overrides,
               "val_accuracy_mean": statistics.fmean(accs),
               "val_accuracy_std": statistics.pstdev(accs) if len(accs) > 1 else 0.0}
        rows.append(row)
        if best is None or row["val_accuracy_mean"] > best["val_accuracy_mean"]:
            best = row
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        columns = keys + ["val_accuracy_mean", "val_accuracy_std"]
        _write_simple_csv(out / "tune_results.csv", columns, rows)
        (out / "best_config.json").write_text(json.dumps(best, indent=2) + "\n")
    return {"best": best, "rows": rows}


def _write_simple_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(col)) for col in columns])
