"""End-to-end command-line runs on a tiny dataset, exercised in-process."""

import csv
import json

import pytest

from stageformer.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


TINY_MODEL = {"input_dim": 4, "embed_dim": 8, "ffn_dim": 8,
              "num_enc_layers": 1, "num_dec_layers": 1, "num_levels": 2,
              "num_heads": 2, "num_points": 2, "num_stages": 3}


@pytest.fixture
def dataset_dir(tmp_path, capsys):
    out = tmp_path / "data"
    code, stdout, _ = run(
        capsys, "gen-data", "--out", str(out),
        "--set", "num_sequences=10", "--set", "t_range=[12, 16]",
        "--set", "num_stages=3", "--set", "input_dim=4",
        "--set", "noise_std=0.1", "--set", "seed=3")
    assert code == 0
    summary = json.loads(stdout)
    assert summary["sequences"] == 10
    return out


@pytest.fixture
def trained(dataset_dir, tmp_path, capsys):
    ckpt = tmp_path / "model.ckpt"
    cfg = {
        "model": TINY_MODEL,
        "train_path": str(dataset_dir / "train.jsonl"),
        "val_path": str(dataset_dir / "val.jsonl"),
        "checkpoint_path": str(ckpt),
        "epochs": 2, "warmup_epochs": 1, "batch_size": 4, "seed": 0,
    }
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    report = tmp_path / "train-report.json"
    code, stdout, _ = run(capsys, "train", "--config", str(cfg_path),
                          "--quiet", "--report", str(report))
    assert code == 0
    assert ckpt.exists() and report.exists()
    summary = json.loads(stdout)
    assert "best_val_accuracy" in summary
    return ckpt


class TestGenData:
    def test_writes_all_split_files(self, dataset_dir):
        for name in ["full", "train", "val", "test"]:
            assert (dataset_dir / f"{name}.jsonl").exists()

    def test_bad_override_exits_nonzero(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen-data", "--out", str(tmp_path / "x"),
                           "--set", "num_sequences")
        assert code == 1
        record = json.loads(err)
        assert record["error"] == "ValueError"


class TestTrainEvalPredict:
    def test_eval_writes_report_and_csv(self, trained, dataset_dir, tmp_path,
                                        capsys):
        report = tmp_path / "metrics.json"
        preds = tmp_path / "preds.csv"
        code, stdout, _ = run(capsys, "eval", "--checkpoint", str(trained),
                              "--data", str(dataset_dir / "val.jsonl"),
                              "--report", str(report),
                              "--predictions", str(preds))
        assert code == 0
        metrics = json.loads(report.read_text())
        assert 0.0 <= metrics["global_accuracy"] <= 1.0
        assert json.loads(stdout) == metrics
        with open(preds) as fh:
            rows = list(csv.DictReader(fh))
        assert rows and set(rows[0]) == {"id", "frame", "true", "predicted"}

    def test_eval_decode_mode_segments_is_monotone(self, trained, dataset_dir,
                                                   tmp_path, capsys):
        preds = tmp_path / "seg-preds.csv"
        code, _, _ = run(capsys, "eval", "--checkpoint", str(trained),
                         "--data", str(dataset_dir / "val.jsonl"),
                         "--decode", "segments", "--predictions", str(preds))
        assert code == 0
        with open(preds) as fh:
            rows = list(csv.DictReader(fh))
        by_id = {}
        for r in rows:
            by_id.setdefault(r["id"], []).append(int(r["predicted"]))
        for labels in by_id.values():
            assert all(a <= b for a, b in zip(labels, labels[1:]))

    def test_predict_csv(self, trained, dataset_dir, tmp_path, capsys):
        out = tmp_path / "out.csv"
        code, stdout, _ = run(capsys, "predict", "--checkpoint", str(trained),
                              "--data", str(dataset_dir / "test.jsonl"),
                              "--out", str(out))
        assert code == 0
        assert json.loads(stdout)["out"] == str(out)
        assert out.exists()

    def test_missing_checkpoint_errors(self, dataset_dir, tmp_path, capsys):
        code, _, err = run(capsys, "eval", "--checkpoint",
                           str(tmp_path / "nope.ckpt"),
                           "--data", str(dataset_dir / "val.jsonl"))
        assert code == 1
        assert "error" in json.loads(err)

    def test_malformed_data_errors(self, trained, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        code, _, err = run(capsys, "eval", "--checkpoint", str(trained),
                           "--data", str(bad))
        assert code == 1
        assert json.loads(err)["error"] == "DatasetFormatError"


class TestDiagnostics:
    def test_gradcheck_passes(self, capsys):
        code, stdout, _ = run(capsys, "gradcheck", "--max-entries", "2")
        assert code == 0
        summary = json.loads(stdout.strip().splitlines()[-1])
        assert summary["passed"] and summary["max_rel_error"] <= 1e-4

    def test_bench_reports_timings(self, trained, dataset_dir, capsys):
        code, stdout, _ = run(capsys, "bench", "--checkpoint", str(trained),
                              "--data", str(dataset_dir / "val.jsonl"))
        assert code == 0
        result = json.loads(stdout)
        assert result["mean_seconds_per_sequence"] > 0
