import json

import pytest
from click.testing import CliRunner

from hexloop import bandit
from hexloop.cli import main
from hexloop.metrics import read_report_csv


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, runner):
    """One tiny end-to-end run shared by the commands that read it."""
    out = tmp_path_factory.mktemp("run")
    config = tmp_path_factory.mktemp("cfg") / "config.yaml"
    config.write_text(
        "rounds: 1\n"
        "interactions: 2\n"
        "d0_size: 2\n"
        "init_epochs: 1\n"
        "ensemble_size: 1\n"
        "schedule:\n"
        "  epochs: 1\n"
        "  batch_size: 4\n",
        encoding="utf-8",
    )
    result = runner.invoke(main, ["run", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_init_data(tmp_path, runner):
    out = tmp_path / "d0.jsonl"
    result = runner.invoke(
        main, ["init-data", "--out", str(out), "--count", "5", "--seed", "7"]
    )
    assert result.exit_code == 0, result.output
    d0 = bandit.load_dataset(out)
    assert len(d0.examples) == 5
    assert all(ex.y == 1 for ex in d0.examples)


def test_train_init_and_eval(tmp_path, runner):
    data = tmp_path / "d0.jsonl"
    runner.invoke(main, ["init-data", "--out", str(data), "--count", "3"])
    ck = tmp_path / "ck"
    result = runner.invoke(
        main,
        [
            "train-init",
            "--data",
            str(data),
            "--out",
            str(ck),
            "--ensemble-size",
            "1",
            "--epochs",
            "1",
        ],
    )
    assert result.exit_code == 0, result.output
    assert (ck / "member-0.npz").exists()
    out_csv = tmp_path / "eval.csv"
    result = runner.invoke(
        main,
        [
            "eval",
            "--checkpoints",
            str(ck),
            "--interactions",
            "2",
            "--out",
            str(out_csv),
        ],
    )
    assert result.exit_code == 0, result.output
    detail = json.loads(result.output.strip().splitlines()[-1])
    assert "completion_rate" in detail
    again = runner.invoke(
        main, ["eval", "--checkpoints", str(ck), "--interactions", "2"]
    )
    assert json.loads(again.output.strip().splitlines()[-1]) == detail
    assert read_report_csv(out_csv)


def test_run_layout(run_dir):
    assert (run_dir / "report.csv").exists()
    assert (run_dir / "round-0" / "dataset.jsonl").exists()
    assert (run_dir / "round-1" / "records.jsonl").exists()
    assert (run_dir / "round-1" / "checkpoints" / "member-0.npz").exists()
    rows = read_report_csv(run_dir / "report.csv")
    assert [r["round"] for r in rows] == ["1"]


def test_replay_matches_logs(run_dir, runner, tmp_path):
    out = tmp_path / "replayed.csv"
    result = runner.invoke(
        main, ["replay", "--run-dir", str(run_dir), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert "round 1" in result.output
    rows = read_report_csv(out)
    original = read_report_csv(run_dir / "round-1" / "report.csv")
    assert rows[0]["completion_rate"] == original[0]["completion_rate"]
    assert rows[0]["mean_emd"] == original[0]["mean_emd"]


def test_report_aggregates(run_dir, runner, tmp_path):
    out = tmp_path / "series.json"
    result = runner.invoke(
        main, ["report", "--run-dir", str(run_dir), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    series = json.loads(out.read_text())
    assert series["round"] == [1]
    assert len(series["completion_rate"]) == 1


def test_run_rejects_zero_rounds(tmp_path, runner):
    result = runner.invoke(
        main, ["run", "--out", str(tmp_path / "x"), "--rounds", "0"]
    )
    assert result.exit_code != 0
    assert "rounds" in result.output


def test_run_rejects_unknown_config_key(tmp_path, runner):
    config = tmp_path / "config.yaml"
    config.write_text("roundz: 3\n", encoding="utf-8")
    result = runner.invoke(
        main, ["run", "--config", str(config), "--out", str(tmp_path / "x")]
    )
    assert result.exit_code != 0
    assert "unknown config keys" in result.output


def test_serve_requires_model_source(runner):
    result = runner.invoke(main, ["serve"])
    assert result.exit_code != 0
    assert "--checkpoints or --oracle" in result.output
