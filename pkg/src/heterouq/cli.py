"""Command-line entry points.

Subcommands:
    run            execute an experiment config (results.csv + manifest.json)
    homophily      print homophily statistics of a dataset directory
    verify-theory  exhaustively check the layer-information identities
    ablate-layers  compare density estimation over layer selections
    sweep-moons    anomaly detection across synthetic homophily levels
    tune           validation-accuracy grid search for the backbone
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .experiment import (
    ExperimentConfig,
    run_experiment,
    run_layer_ablation,
    run_moons_sweep,
    tune,
)
from .graph import homophily_report, load_dataset
from .infotheory import verify_theory


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "manifest", None):
        payload = json.loads(Path(args.manifest).read_text())
        return ExperimentConfig.from_dict(payload["config"])
    return ExperimentConfig.from_json(args.config)


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    out = run_experiment(cfg, out_dir=args.output)
    for row in out["aggregate"]:
        mean = row.get("ood_auc_roc_epi_mean")
        mean_txt = "n/a" if mean is None else f"{mean:.3f}"
        print(f"  {row['estimator']:<10} epistemic OOD AUC-ROC {mean_txt} "
              f"({row['runs']} runs)")
    dest = Path(args.output if args.output is not None else cfg.output)
    print(f"results written to {dest / 'results.csv'}")
    return 0


def _cmd_homophily(args) -> int:
    g, _ = load_dataset(args.dataset)
    report = homophily_report(g, include_adjusted=args.adjusted)
    print(f"nodes {g.num_nodes}  edges {g.num_edges}  classes {g.num_classes}")
    print(f"edge homophily   {report.h_edge:.4f}")
    print(f"node homophily   {report.h_node:.4f}")
    print(f"class homophily  {report.h_class:.4f}")
    if report.h_adjusted is not None:
        print(f"adjusted         {report.h_adjusted:.4f}")
    print("compatibility matrix (rows: class of node, cols: class of neighbor):")
    with np.printoptions(precision=3, suppress=True):
        print(report.compatibility)
    return 0


def _cmd_verify_theory(args) -> int:
    report = verify_theory(
        num_models=args.models,
        seed=args.seed,
        max_alphabet=args.max_alphabet,
        max_shells=args.max_shells,
        max_layers=args.max_layers,
    )
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_ablate_layers(args) -> int:
    cfg = _load_config(args)
    rows = run_layer_ablation(cfg, out_dir=args.output or cfg.output)
    for row in rows:
        print(f"  {row['selection']:<12} OOD AUC-ROC "
              f"{row['ood_auc_roc_mean']:.3f} +- {row['ood_auc_roc_std']:.3f}")
    return 0


def _cmd_sweep_moons(args) -> int:
    cfg = _load_config(args)
    h_values = args.homophily or cfg.dataset.get("moons", {}).get(
        "h_values", [0.1, 0.3, 0.5, 0.7, 0.9])
    moons = {k: v for k, v in cfg.dataset.get("moons", {}).items() if k != "h_values"}
    cfg.dataset = {"moons": moons}
    rows = run_moons_sweep(h_values, cfg, out_dir=args.output or cfg.output)
    for row in rows:
        print(f"  h={row['homophily']:<4} {row['estimator']:<8} AUC-ROC "
              f"{row['ood_auc_roc_mean']:.3f} +- {row['ood_auc_roc_std']:.3f}")
    return 0


def _cmd_tune(args) -> int:
    cfg = _load_config(args)
    out = tune(cfg, out_dir=args.output or cfg.output)
    print("best configuration by validation accuracy:")
    print(json.dumps(out["best"], indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heterouq", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_cmd(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--config", help="experiment config JSON")
        group.add_argument("--manifest", help="replay a stored manifest.json")
        p.add_argument("--output", default=None, help="override the output directory")
        p.set_defaults(func=func)
        return p

    add_config_cmd("run", _cmd_run, "run an experiment grid")

    p = sub.add_parser("homophily", help="homophily statistics of a dataset directory")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("--adjusted", action="store_true",
                   help="also report degree-adjusted edge homophily")
    p.set_defaults(func=_cmd_homophily)

    p = sub.add_parser("verify-theory",
                       help="verify the layer-information identities on random finite models")
    p.add_argument("--models", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-alphabet", type=int, default=3)
    p.add_argument("--max-shells", type=int, default=2)
    p.add_argument("--max-layers", type=int, default=3)
    p.set_defaults(func=_cmd_verify_theory)

    add_config_cmd("ablate-layers", _cmd_ablate_layers,
                   "compare density estimation over layer selections")

    p = add_config_cmd("sweep-moons", _cmd_sweep_moons,
                       "anomaly detection across homophily levels")
    p.add_argument("--homophily", type=float, nargs="+", default=None,
                   help="homophily grid (default from config or 0.1..0.9)")

    add_config_cmd("tune", _cmd_tune, "hyperparameter grid search")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
