"""Functional tests running the command-line surface end to end on tiny sizes."""
import csv
import json

import pytest

from app.cli import main


@pytest.fixture
def overrides(tmp_path):
    values = {
        "data_dir": tmp_path / "data",
        "run_dir": tmp_path / "runs",
        "synthetic_size": 32,
        "eval_size": 8,
        "max_seq_len": 16,
        "num_layers": 2,
        "d_model": 8,
        "num_heads": 2,
        "d_ff": 16,
        "epochs": 1,
        "rl_epochs": 1,
        "batch_size": 8,
        "warmup": 0,
        "repeats": 3,
        "target_rates": "[0.3, 1.0]",
        "truncation_depths": "[1, 2]",
        "entropy_thresholds": "[0.1, 0.5]",
    }
    args = []
    for key, value in values.items():
        args += ["--set", f"{key}={value}"]
    return args


def _run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured


def _ok(capsys, argv) -> dict:
    code, captured = _run(capsys, argv)
    assert code == 0, captured.err
    return json.loads(captured.out.strip().splitlines()[-1])


def test_full_command_chain(tmp_path, capsys, overrides) -> None:
    runs = tmp_path / "runs"
    generated = _ok(capsys, overrides + ["gen-data", "--kind", "easy-hard-mix"])
    assert set(generated["splits"]) == {"train", "dev", "test"}

    assert _ok(capsys, overrides + ["train-backbone"])["checkpoint"] == str(runs / "backbone.json")
    _ok(capsys, overrides + ["init-gates"])
    _ok(capsys, overrides + ["train-rl"])
    _ok(capsys, overrides + ["train-soft"])
    _ok(capsys, overrides + ["train-exit"])
    for name in ("backbone", "gates", "dpbert", "dpbert_soft", "early_exit"):
        assert (runs / f"{name}.json").is_file()
    for name in ("train_backbone", "init_gates", "train_rl", "train_soft", "train_exit"):
        assert (runs / f"{name}.csv").read_text().startswith("step,stage,task_loss")

    evaluated = _ok(capsys, overrides + ["eval", "--engine", "backbone", "--engine", "dpbert", "--engine", "truncated"])
    assert [r["engine"] for r in evaluated["records"]] == ["backbone", "dpbert", "truncated"]
    with open(evaluated["metrics"], newline="") as handle:
        assert len(list(csv.DictReader(handle))) == 3

    exit_eval = _ok(
        capsys,
        overrides + ["eval", "--checkpoint", str(runs / "early_exit.json"), "--engine", "early_exit", "--out", str(runs / "exit.csv")],
    )
    assert exit_eval["records"][0]["engine"] == "early_exit"

    bench = _ok(capsys, overrides + ["bench", "--engine", "backbone", "--engine", "dpbert", "--forced", "0", "2"])
    assert [item["executed"] for item in bench["forced"]] == [0, 2]
    with open(bench["latency"], newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["engine"] for row in rows] == ["backbone", "dpbert"]
    assert "per_example_ns" not in rows[0]

    swept = _ok(capsys, overrides + ["sweep"])
    with open(swept["curve"], newline="") as handle:
        variants = {row["variant"] for row in csv.DictReader(handle)}
    assert variants == {"dpbert", "truncated", "early_exit"}

    traces = _ok(capsys, overrides + ["dump-traces"])
    assert traces["traces"] == 8
    lines = (runs / "traces_dpbert.jsonl").read_text().splitlines()
    assert len(lines) == 8
    assert set(json.loads(lines[0])) >= {"example_id", "scores", "actions", "executed_layers", "path", "logits", "label"}


def test_metrics_csv_is_reproducible(tmp_path, capsys, overrides) -> None:
    _ok(capsys, overrides + ["gen-data"])
    _ok(capsys, overrides + ["train-backbone"])
    argv = overrides + ["eval", "--checkpoint", str(tmp_path / "runs" / "backbone.json"), "--engine", "backbone"]
    first = (tmp_path / "runs" / "metrics.csv")
    _ok(capsys, argv)
    content = first.read_bytes()
    _ok(capsys, argv)
    assert first.read_bytes() == content


def test_errors_are_reported_as_json(tmp_path, capsys, overrides) -> None:
    code, captured = _run(capsys, ["--set", "target_rat=0.3", "gen-data"])
    assert code == 1
    error = json.loads(captured.err.strip().splitlines()[-1])
    assert error["error"] == "ValidationError"
    assert "target_rat" in error["message"]

    code, captured = _run(capsys, overrides + ["init-gates"])
    assert code == 1
    assert "backbone.json" in json.loads(captured.err.strip().splitlines()[-1])["message"]

    code, captured = _run(capsys, ["--set", "no-equals-sign", "gen-data"])
    assert code == 1
    assert json.loads(captured.err.strip().splitlines()[-1])["error"] == "ValueError"


@pytest.mark.parametrize(
    "argv, fragment",
    [
        (["train-everything"], "invalid choice"),
        ([], "required"),
        (["eval", "--engine", "oracle"], "oracle"),
        (["bench", "--forced", "two"], "invalid int value"),
    ],
)
def test_usage_errors_are_reported_as_json(capsys, argv, fragment) -> None:
    code, captured = _run(capsys, argv)
    assert code == 1
    assert captured.out == ""
    error = json.loads(captured.err.strip().splitlines()[-1])
    assert error["error"] == "UsageError"
    assert fragment in error["message"]
