import json

import numpy as np
import pytest

from heterouq import save_dataset
from heterouq.cli import main
from heterouq.experiment import (
    RESULT_COLUMNS,
    ExperimentConfig,
    run_experiment,
    run_layer_ablation,
    run_moons_sweep,
    tune,
)
from conftest import random_graph

TINY_MOONS = {
    "n_per_class": 60,
    "anomaly_fraction": 0.15,
    "avg_degree": 5.0,
    "homophily": 0.5,
    "noise": 0.1,
}


def tiny_config(**overrides):
    base = {
        "seed": 11,
        "dataset": {"moons": dict(TINY_MOONS)},
        "arch": {"kind": "res_gcn", "layers": 2, "hidden_dim": 16, "dropout": 0.2},
        "train": {"lr": 0.01, "weight_decay": 1e-4, "max_epochs": 60, "patience": 20},
        "split": {"per_class_train": 15, "per_class_val": 10},
        "shift": {"kind": "loc", "classes": [2]},
        "estimators": [{"name": "jlde", "k": 3}, {"name": "energy"}],
        "repeats": {"splits": 1, "inits": 1},
        "output": "out",
    }
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


def test_run_experiment_row_structure(tmp_path):
    cfg = tiny_config()
    out = run_experiment(cfg, out_dir=tmp_path)
    assert len(out["aggregate"]) == 2  # one row per estimator
    names = {row["estimator"] for row in out["aggregate"]}
    assert names == {"jlde", "energy"}
    assert (tmp_path / "results.csv").exists()
    assert (tmp_path / "manifest.json").exists()


def test_run_experiment_std_columns_populated(tmp_path):
    cfg = tiny_config(repeats={"splits": 2, "inits": 2})
    out = run_experiment(cfg, out_dir=tmp_path)
    for row in out["aggregate"]:
        assert row["runs"] == 4
        assert row["ood_auc_roc_epi_std"] is not None


def test_manifest_replay_is_byte_identical(tmp_path):
    cfg = tiny_config()
    run_experiment(cfg, out_dir=tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    replay = ExperimentConfig.from_dict(manifest["config"])
    run_experiment(replay, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "results.csv").read_bytes() == \
        (tmp_path / "b" / "results.csv").read_bytes()


def test_aleatoric_metrics_shared_across_estimators(tmp_path):
    cfg = tiny_config(estimators=[{"name": "jlde", "k": 3}, {"name": "energy"},
                                  {"name": "kde"}])
    out = run_experiment(cfg, out_dir=tmp_path)
    rows = out["rows"]
    by_cell = {}
    for row in rows:
        key = (row["split"], row["init"])
        by_cell.setdefault(key, []).append(row)
    for cell_rows in by_cell.values():
        assert len({r["ood_auc_roc_alea"] for r in cell_rows}) == 1
        assert len({r["id_accuracy"] for r in cell_rows}) == 1


def test_results_schema_stable_across_estimator_subsets(tmp_path):
    cfg_a = tiny_config()
    cfg_b = tiny_config(estimators=[{"name": "energy"}])
    run_experiment(cfg_a, out_dir=tmp_path / "a")
    run_experiment(cfg_b, out_dir=tmp_path / "b")
    header_a = (tmp_path / "a" / "results.csv").read_text().splitlines()[0]
    header_b = (tmp_path / "b" / "results.csv").read_text().splitlines()[0]
    assert header_a == header_b == ",".join(RESULT_COLUMNS)


def test_feature_shift_experiment_runs(tmp_path):
    cfg = tiny_config(shift={"kind": "far_features", "ood_fraction": 0.4},
                      dataset={"moons": {**TINY_MOONS, "anomaly_fraction": 0.0}})
    out = run_experiment(cfg, out_dir=tmp_path)
    row = out["aggregate"][0]
    assert row["ood_auc_roc_epi_mean"] is not None


def test_mcd_and_ensemble_estimators(tmp_path):
    cfg = tiny_config(estimators=[{"name": "mcd", "samples": 4},
                                  {"name": "ensemble", "members": 2}])
    out = run_experiment(cfg, out_dir=tmp_path)
    assert {r["estimator"] for r in out["aggregate"]} == {"mcd", "ensemble"}


def test_layer_ablation_row_count():
    cfg = tiny_config()
    rows = run_layer_ablation(cfg)
    selections = {r["selection"] for r in rows}
    assert selections == {"single(1)", "single(2)", "first_last", "all_add", "all_cat"}


def test_moons_sweep_rows_and_determinism(tmp_path):
    cfg = tiny_config()
    rows_a = run_moons_sweep([0.3, 0.8], cfg, out_dir=tmp_path)
    rows_b = run_moons_sweep([0.3, 0.8], cfg)
    assert len(rows_a) == 4  # 2 h-values x 2 estimators
    for a, b in zip(rows_a, rows_b):
        assert a == b
    assert (tmp_path / "moons_sweep.csv").exists()


def test_tune_returns_best_cell(tmp_path):
    cfg = tiny_config(train={"lr": 0.01, "weight_decay": 0.0,
                             "max_epochs": 30, "patience": 10})
    grid = {"hidden_dim": [8, 16], "lr": [0.01]}
    out = tune(cfg, grid=grid, out_dir=tmp_path)
    assert len(out["rows"]) == 2
    assert out["best"] in out["rows"]
    assert (tmp_path / "best_config.json").exists()


def test_unknown_config_key_rejected():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"bogus": 1})


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_verify_theory_exits_zero(capsys):
    code = main(["verify-theory", "--models", "10", "--seed", "2"])
    assert code == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_homophily_prints_stats(tmp_path, capsys):
    g = random_graph(num_nodes=30, seed=60)
    save_dataset(g, tmp_path / "ds")
    code = main(["homophily", str(tmp_path / "ds"), "--adjusted"])
    assert code == 0
    out = capsys.readouterr().out
    assert "edge homophily" in out and "adjusted" in out


def test_cli_run_writes_outputs(tmp_path, capsys):
    cfg = tiny_config()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg.to_dict()))
    code = main(["run", "--config", str(cfg_path), "--output", str(tmp_path / "out")])
    assert code == 0
    assert (tmp_path / "out" / "results.csv").exists()
    assert (tmp_path / "out" / "manifest.json").exists()


def test_cli_run_replays_manifest(tmp_path):
    cfg = tiny_config()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg.to_dict()))
    main(["run", "--config", str(cfg_path), "--output", str(tmp_path / "a")])
    main(["run", "--manifest", str(tmp_path / "a" / "manifest.json"),
          "--output", str(tmp_path / "b")])
    assert (tmp_path / "a" / "results.csv").read_bytes() == \
        (tmp_path / "b" / "results.csv").read_bytes()
