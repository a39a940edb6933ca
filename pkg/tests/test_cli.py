"""Command-line interface: artifacts, exit codes, reproducibility."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from corrfusion.cli import main


def run(*argv):
    return main(list(argv))


def gen_args(out, pairs=160, classes=3, dim=6, seed=5, extra=()):
    return ["gen", "--classes", str(classes), "--dim", str(dim), "--pairs", str(pairs),
            "--p-change", "0.2", "--noise", "0.5", "--temporal-corr", "0.6",
            "--seed", str(seed), "--out", str(out), *extra]


TRAIN_OVERRIDES = ["--epochs", "2", "--batch-size", "8", "--hidden", "8",
                   "--embed-dim", "8", "--r", "2", "--seed", "0"]


@pytest.fixture()
def dataset_dir(tmp_path):
    out = tmp_path / "data"
    assert run(*gen_args(out)) == 0
    return out


class TestGen:
    def test_writes_dataset_and_config(self, tmp_path):
        out = tmp_path / "ds"
        assert run(*gen_args(out, pairs=40, classes=8)) == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["n"] == 40 and meta["n_classes"] == 8
        assert (out / "config.json").is_file()

    def test_no_change_gives_identical_columns(self, tmp_path):
        out = tmp_path / "ds"
        assert run("gen", "--classes", "3", "--dim", "4", "--pairs", "30",
                   "--p-change", "0", "--noise", "0.5", "--temporal-corr", "0.6",
                   "--seed", "1", "--out", str(out)) == 0
        rows = (out / "labels.csv").read_text().splitlines()[1:]
        assert all(r.split(",")[0] == r.split(",")[1] for r in rows)

    def test_rerun_is_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(*gen_args(a)) == 0
        assert run(*gen_args(b)) == 0
        assert (a / "x1.f64").read_bytes() == (b / "x1.f64").read_bytes()

    def test_invalid_flag_value(self, tmp_path):
        assert run("gen", "--classes", "1", "--pairs", "10",
                   "--out", str(tmp_path / "x")) == 2


class TestTrainEval:
    def test_artifacts_and_report(self, tmp_path, dataset_dir):
        out = tmp_path / "run"
        assert run("train", "--data", str(dataset_dir), "--out", str(out),
                   *TRAIN_OVERRIDES) == 0
        assert (out / "history.jsonl").is_file()
        assert (out / "config.json").is_file()
        assert (out / "params.bin").is_file()
        assert (out / "final" / "params.bin").is_file()
        history = [json.loads(line) for line in
                   (out / "history.jsonl").read_text().splitlines()]
        assert len(history) == 2

        report_path = tmp_path / "report.json"
        assert run("eval", "--model", str(out), "--data", str(dataset_dir),
                   "--split", "test", "--report", str(report_path)) == 0
        report = json.loads(report_path.read_text())
        total = report["tp"] + report["fn"] + report["fp"] + report["tn"]
        assert total == sum(sum(row) for row in report["confusion_t1"])
        assert report["oa_bi"] == pytest.approx((report["tp"] + report["tn"]) / total)
        assert report_path.with_name("report.config.json").is_file()

    def test_head_comparison_produces_reports(self, tmp_path, dataset_dir):
        reports = {}
        for head in ("nofusion", "corrfusion"):
            out = tmp_path / head
            assert run("train", "--data", str(dataset_dir), "--out", str(out),
                       "--head", head, *TRAIN_OVERRIDES) == 0
            report_path = tmp_path / f"{head}.json"
            assert run("eval", "--model", str(out), "--data", str(dataset_dir),
                       "--split", "val", "--report", str(report_path)) == 0
            reports[head] = json.loads(report_path.read_text())
        assert set(reports["nofusion"]) == set(reports["corrfusion"])

    def test_r_must_divide_embedding(self, tmp_path, dataset_dir):
        code = run("train", "--data", str(dataset_dir), "--out", str(tmp_path / "x"),
                   "--embed-dim", "16", "--r", "3", "--epochs", "1")
        assert code == 2

    def test_missing_dataset(self, tmp_path):
        code = run("train", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "x"), "--epochs", "1")
        assert code == 1

    def test_config_file_and_flag_precedence(self, tmp_path, dataset_dir):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"epochs": 1, "batch_size": 8, "hidden": [8],
                                        "embed_dim": 8, "r": 2, "seed": 3}))
        out = tmp_path / "run"
        assert run("train", "--data", str(dataset_dir), "--out", str(out),
                   "--config", str(cfg_path), "--epochs", "2") == 0
        resolved = json.loads((out / "config.json").read_text())
        assert resolved["epochs"] == 2      # flag wins
        assert resolved["seed"] == 3        # file wins over default
        history = (out / "history.jsonl").read_text().splitlines()
        assert len(history) == 2

    def test_determinism_byte_for_byte(self, tmp_path, dataset_dir):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run("train", "--data", str(dataset_dir), "--out", str(out),
                       *TRAIN_OVERRIDES) == 0
            report = tmp_path / f"{name}-report.json"
            assert run("eval", "--model", str(out), "--data", str(dataset_dir),
                       "--split", "test", "--report", str(report)) == 0
            outs.append((out, report))
        (a, ra), (b, rb) = outs
        assert (a / "history.jsonl").read_bytes() == (b / "history.jsonl").read_bytes()
        assert ra.read_bytes() == rb.read_bytes()
        assert (a / "params.bin").read_bytes() == (b / "params.bin").read_bytes()


class TestGradcheckCommand:
    def test_default_passes(self, capsys):
        assert run("gradcheck") == 0
        out = capsys.readouterr().out
        assert "max_rel_err" in out and "PASS" in out

    def test_impossible_tolerance_fails(self, capsys):
        assert run("gradcheck", "--tol", "1e-18") == 1
        assert "FAIL" in capsys.readouterr().out

    def test_dcca_head_rejected(self):
        assert run("gradcheck", "--head", "dcca") == 2


class TestSweep:
    def test_r_sweep_csv(self, tmp_path, dataset_dir):
        out = tmp_path / "sweep"
        assert run("sweep", "--param", "r", "--values", "1,2,4", "--repeat", "2",
                   "--data", str(dataset_dir), "--out", str(out),
                   "--epochs", "1", "--embed-dim", "8", "--hidden", "8",
                   "--seed", "0") == 0
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert [r["param"] for r in rows] == ["r"] * 6
        counts = [int(r["param_count"]) for r in rows[::2]]
        assert counts[0] > counts[1] > counts[2]
        seeds = {r["seed"] for r in rows}
        assert seeds == {"0", "1"}

    def test_rho_sweep(self, tmp_path, dataset_dir):
        out = tmp_path / "sweep"
        assert run("sweep", "--param", "rho", "--values", "0,0.6,0.9", "--repeat", "1",
                   "--data", str(dataset_dir), "--out", str(out),
                   "--epochs", "1", "--embed-dim", "8", "--hidden", "8") == 0
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["value"]) for r in rows] == [0.0, 0.6, 0.9]

    def test_invalid_r_value(self, tmp_path, dataset_dir):
        assert run("sweep", "--param", "r", "--values", "3", "--data",
                   str(dataset_dir), "--out", str(tmp_path / "s"),
                   "--embed-dim", "8") == 2

    def test_invalid_rho_value(self, tmp_path, dataset_dir):
        assert run("sweep", "--param", "rho", "--values", "1.5", "--data",
                   str(dataset_dir), "--out", str(tmp_path / "s")) == 2


class TestUsage:
    def test_no_command(self):
        assert run() == 2

    def test_unknown_command(self):
        assert run("transmogrify") == 2
