"""Command-line entry points: data bootstrap, initial training, the round
loop, frozen-checkpoint evaluation, log replay, the HTTP service, and
report aggregation."""
from __future__ import annotations

import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import click
import yaml

from . import bandit, metrics, orchestrator
from .bandit import TrainSchedule
from .hexworld import WorldConfig
from .orchestrator import ExperimentConfig, default_model_config


def _load_config(path, **overrides) -> ExperimentConfig:
    data = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    world = WorldConfig(**data.pop("world", {}))
    schedule = TrainSchedule(**data.pop("schedule", {}))
    known = {f.name for f in dataclass_fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise click.ClickException(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(world=world, schedule=schedule, **data)


@click.group()
def main():
    """Continual learning for grounded instruction generation."""


@main.command("init-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--count", default=500, show_default=True)
@click.option("--seed", default=0, show_default=True)
def init_data(out, count, seed):
    """Bootstrap the all-positive seed dataset from the plan verbalizer."""
    d0 = orchestrator.bootstrap_d0(count, seed)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    bandit.save_dataset(out, d0)
    click.echo(f"wrote {len(d0.examples)} examples to {out}")


@main.command("train-init")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--ensemble-size", default=2, show_default=True)
@click.option("--epochs", default=4, show_default=True)
def train_init(data, out, seed, ensemble_size, epochs):
    """Supervised training of the initial ensemble on the seed dataset."""
    d0 = bandit.load_dataset(data)
    config = ExperimentConfig(
        seed=seed, ensemble_size=ensemble_size, init_epochs=epochs
    )
    model_config = default_model_config()
    ensemble = orchestrator.train_initial_ensemble(d0, config, model_config)
    orchestrator.save_ensemble(out, ensemble, model_config)
    click.echo(f"wrote {len(ensemble)} checkpoints to {out}")


@main.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int)
@click.option("--rounds", type=int)
@click.option("--interactions", type=int)
@click.option("--variant", type=click.Choice(orchestrator.VARIANTS))
@click.option("--follower", "follower_source", type=click.Choice(["sim", "human"]))
@click.option("--profile", type=str)
def run(config_path, out, **overrides):
    """Run the full continual-learning experiment."""
    try:
        config = _load_config(config_path, **overrides)
    except ValueError as err:
        raise click.ClickException(str(err))
    if config.follower_source != "sim":
        raise click.ClickException("run drives the simulated follower; use serve for humans")
    _, _, reports = orchestrator.run_experiment(config, out_dir=out)
    for report in reports:
        click.echo(
            f"round {report.round_index}: completion "
            f"{report.completion_rate:.3f}, emd {report.mean_emd:.3f}"
        )


@main.command("eval")
@click.option("--checkpoints", required=True, type=click.Path(exists=True))
@click.option("--interactions", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--round", "round_index", default=1, show_default=True)
@click.option("--profile", default="typical", show_default=True)
@click.option("--out", type=click.Path())
def eval_cmd(checkpoints, interactions, seed, round_index, profile, out):
    """Frozen-checkpoint evaluation over simulated interactions."""
    ensemble, model_config = orchestrator.load_ensemble(checkpoints)
    config = ExperimentConfig(
        seed=seed, profile=profile, ensemble_size=len(ensemble)
    )
    report = orchestrator.evaluate_ensemble(
        ensemble, model_config, config, round_index, interactions
    )
    click.echo(report.to_json())
    if out:
        metrics.write_report_csv(out, [report])


@main.command("replay")
@click.option("--run-dir", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path())
def replay(run_dir, out):
    """Re-derive round reports from persisted records and compare."""
    run_dir = Path(run_dir)
    reports = []
    mismatches = 0
    for rd in sorted(run_dir.glob("round-*")):
        records_path = rd / "records.jsonl"
        if not records_path.exists():
            continue
        records = orchestrator.load_records(records_path)
        dataset = bandit.load_dataset(rd / "dataset.jsonl")
        r = records[0].round_index
        report = orchestrator.report_from_records(records, dataset, r)
        reports.append(report)
        original = metrics.read_report_csv(rd / "report.csv")
        if original:
            fresh = {
                k: f"{v}" for k, v in report.csv_row().items()
            }
            for key, value in original[0].items():
                if key in ("completion_rate", "mean_emd") and float(
                    value
                ) != float(fresh[key]):
                    mismatches += 1
        click.echo(
            f"round {r}: completion {report.completion_rate:.3f}, "
            f"emd {report.mean_emd:.3f}"
        )
    if out:
        metrics.write_report_csv(out, reports)
    if mismatches:
        raise click.ClickException(f"{mismatches} metric mismatches against logs")


@main.command("serve")
@click.option("--checkpoints", type=click.Path(exists=True))
@click.option("--oracle", is_flag=True, help="verbalizer instructions, no model")
@click.option("--port", default=8080, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--records-dir", type=click.Path())
def serve_cmd(checkpoints, oracle, port, seed, records_dir):
    """Serve the human-follower session protocol."""
    from . import service

    ensemble = model_config = None
    if checkpoints:
        ensemble, model_config = orchestrator.load_ensemble(checkpoints)
    elif not oracle:
        raise click.ClickException("--checkpoints or --oracle is required")
    config = ExperimentConfig(seed=seed, ensemble_size=len(ensemble) if ensemble else 1)
    app = service.create_app(
        ensemble=ensemble,
        model_config=model_config,
        config=config,
        oracle=oracle,
        records_dir=records_dir,
    )
    service.serve(app, port=port)


@main.command("report")
@click.option("--run-dir", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path())
def report_cmd(run_dir, out):
    """Aggregate per-round reports into plot-ready series."""
    run_dir = Path(run_dir)
    rows = []
    for rd in sorted(run_dir.glob("round-*")):
        path = rd / "report.csv"
        if path.exists():
            rows.extend(metrics.read_report_csv(path))
    rows.sort(key=lambda r: int(r["round"]))
    series = {
        "round": [int(r["round"]) for r in rows],
        "completion_rate": [float(r["completion_rate"]) for r in rows],
        "mean_emd": [float(r["mean_emd"]) for r in rows],
        "perceived_correct_rate": [
            float(r["perceived_correct_rate"]) for r in rows
        ],
        "vocab_size": [int(r["vocab_size"]) for r in rows],
    }
    text = json.dumps(series, indent=2)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    click.echo(text)


if __name__ == "__main__":
    sys.exit(main())
