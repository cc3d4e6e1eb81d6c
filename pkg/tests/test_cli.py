import csv
import json

import numpy as np
import pytest

from synbench.cli import main

SMALL_WORLD = """
[world]
n_level1 = 2
n_level2 = 2
n_level3 = 2
sites_per_region = 2
n_days = 60
revisit_min = 1
revisit_max = 2
seed = 3

[train]
window_len = 10
batch_size = 8
epochs = 2
hidden_size = 4
seed = 5

[experiment]
family = global_local
taxonomy = level1
train_start = 2000-01-01
train_end = 2000-01-31
test_start = 2000-01-31
test_end = 2000-03-01
data_seed = 9

[io]
workers = 1
"""


@pytest.fixture()
def world_dir(tmp_path):
    cfg = tmp_path / "config.cfg"
    cfg.write_text(SMALL_WORLD)
    data = tmp_path / "world"
    assert main(["gen-world", "--config", str(cfg), "--out", str(data)]) == 0
    return cfg, data


def test_gen_world_outputs(world_dir, capsys):
    cfg, data = world_dir
    for name in ("sites.csv", "forcing.csv", "target.csv", "latent_truth.csv"):
        assert (data / name).exists()
    with open(data / "sites.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == 2 * 2 * 2 * 2


def test_gen_world_idempotent(world_dir, tmp_path):
    cfg, data = world_dir
    second = tmp_path / "again"
    assert main(["gen-world", "--config", str(cfg), "--out", str(second)]) == 0
    for name in ("sites.csv", "forcing.csv", "target.csv", "latent_truth.csv"):
        assert (data / name).read_bytes() == (second / name).read_bytes()


def test_gen_world_missing_seed(tmp_path, capsys):
    cfg = tmp_path / "config.cfg"
    cfg.write_text("[world]\nn_level1 = 2\n")
    code = main(["gen-world", "--config", str(cfg), "--out", str(tmp_path / "w")])
    assert code == 1
    assert "world.seed" in capsys.readouterr().err


def test_train_and_eval_commands(world_dir, tmp_path, capsys):
    cfg, data = world_dir
    model_dir = tmp_path / "model"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(model_dir)]) == 0
    assert (model_dir / "checkpoint.bin").exists()
    assert (model_dir / "train_log.csv").exists()

    eval_dir = tmp_path / "metrics"
    code = main(
        [
            "eval",
            "--config",
            str(cfg),
            "--data",
            str(data),
            "--checkpoint",
            str(model_dir / "checkpoint.bin"),
            "--out",
            str(eval_dir),
        ]
    )
    assert code == 0
    lines = (eval_dir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "site_id,region,model_id,rmse,corr,nse,n_obs"
    assert len(lines) == 1 + 16


def test_run_suite_global_local(world_dir, tmp_path, capsys):
    cfg, data = world_dir
    out = tmp_path / "suite"
    code = main(["run-suite", "--config", str(cfg), "--data", str(data), "--out", str(out)])
    assert code == 0
    captured = capsys.readouterr().out
    assert "global" in captured
    assert "All" in captured  # pooled row in the summary table
    assert (out / "comparisons.csv").exists()
    run_dirs = list((out / "runs").iterdir())
    assert len(run_dirs) == 3  # global + 2 level-1 letters


def test_run_suite_similar_dissimilar_size_controlled(world_dir, tmp_path, capsys):
    cfg_path, data = world_dir
    text = cfg_path.read_text().replace("family = global_local", "family = similar_dissimilar")
    text = text.replace("taxonomy = level1\n", "size_controlled = true\nmin_roi_sites = 2\nrois = S1.1.1, S2.2.2\n")
    sd_cfg = cfg_path.parent / "sd.cfg"
    sd_cfg.write_text(text)
    out = tmp_path / "suite_sd"
    code = main(["run-suite", "--config", str(sd_cfg), "--data", str(data), "--out", str(out)])
    assert code == 0
    manifests = sorted((out / "runs").glob("*/manifest.json"))
    assert len(manifests) == 8  # 2 ROIs x 4 scenarios
    added = {}
    for path in manifests:
        manifest = json.loads(path.read_text())
        roi = manifest["spec"]["roi"]
        scenario = manifest["spec"]["scenario"]
        if scenario != "local":
            added.setdefault(roi, set()).add(manifest["n_added_sites"])
    for roi, counts in added.items():
        assert len(counts) == 1  # equal added-site counts under size control
    captured = capsys.readouterr().out
    assert "local_close" in captured


def test_run_suite_partial_failure_exit_code(world_dir, tmp_path, capsys):
    cfg_path, data = world_dir
    text = cfg_path.read_text().replace("family = global_local", "family = similar_dissimilar")
    # one real ROI, one ROI absent from the world: its runs fail, siblings pass
    text = text.replace("taxonomy = level1\n", "rois = S1.1.1, S9.9.9\n")
    sd_cfg = cfg_path.parent / "partial.cfg"
    sd_cfg.write_text(text)
    out = tmp_path / "partial"
    code = main(["run-suite", "--config", str(sd_cfg), "--data", str(data), "--out", str(out)])
    assert code == 3
    captured = capsys.readouterr().out
    assert "FAILED" in captured
    manifests = sorted((out / "runs").glob("*/manifest.json"))
    statuses = {json.loads(p.read_text())["status"] for p in manifests}
    assert statuses == {"ok", "failed"}


def test_run_suite_invalid_window(world_dir, tmp_path, capsys):
    cfg_path, data = world_dir
    text = cfg_path.read_text().replace("test_end = 2000-03-01", "test_end = 2000-01-15")
    bad_cfg = cfg_path.parent / "bad.cfg"
    bad_cfg.write_text(text)
    code = main(["run-suite", "--config", str(bad_cfg), "--data", str(data), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "windows" in capsys.readouterr().err


def test_report_command(world_dir, tmp_path, capsys):
    cfg, data = world_dir
    suite = tmp_path / "suite"
    assert main(["run-suite", "--config", str(cfg), "--data", str(data), "--out", str(suite)]) == 0
    report_dir = tmp_path / "report"
    code = main(["report", "--runs", str(suite), "--out", str(report_dir)])
    assert code == 0
    assert (report_dir / "report.csv").exists()
    assert (report_dir / "report.txt").exists()
    for metric in ("rmse", "corr", "nse"):
        assert (report_dir / f"boxplot_{metric}.csv").exists()

    # box-plot medians reproduce the comparison medians exactly
    comp_rows = list(csv.DictReader(open(suite / "comparisons.csv")))
    box_rows = {
        (r["region"], r["model_id"]): r
        for r in csv.DictReader(open(report_dir / "boxplot_rmse.csv"))
    }
    for row in comp_rows:
        if row["metric"] != "rmse" or row["region"] == "All":
            continue
        box = box_rows[(row["region"], row["model_a"])]
        assert float(box["median"]) == float(row["median_a"])


def test_report_requires_manifests(tmp_path, capsys):
    empty = tmp_path / "nothing"
    empty.mkdir()
    code = main(["report", "--runs", str(empty), "--out", str(tmp_path / "r")])
    assert code == 1
    assert "no run manifests" in capsys.readouterr().err


def test_rerun_suite_byte_identical(world_dir, tmp_path):
    cfg, data = world_dir
    out1 = tmp_path / "one"
    out2 = tmp_path / "two"
    assert main(["run-suite", "--config", str(cfg), "--data", str(data), "--out", str(out1)]) == 0
    assert main(["run-suite", "--config", str(cfg), "--data", str(data), "--out", str(out2)]) == 0
    for first in sorted((out1 / "runs").iterdir()):
        second = out2 / "runs" / first.name
        for name in ("manifest.json", "checkpoint.bin", "metrics.csv", "train_log.csv", "comparisons.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name
    assert (out1 / "comparisons.csv").read_bytes() == (out2 / "comparisons.csv").read_bytes()
