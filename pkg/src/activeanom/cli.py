"""Command-line entry points: benchmark runs, synthesis, evaluation, serving.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime abort.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import evaluation
from .data import (
    SyntheticSpec,
    dataset_stats,
    load_idx,
    open_dataset,
    save_dataset,
    stratified_subsample,
    synthesize_hard,
    synthesize_reduced_class,
    synthetic_blobs,
    two_regime_mixture,
)
from .loop import ConfigError, OracleExpert, RunConfig, run_active
from .models import UsageError
from .nn.optim import TrainingDiverged

_CLI_KIND = {
    "dae": "dae",
    "classnet": "classnet",
    "dae-uai": "dae_uai",
    "classnet-uai": "classnet_uai",
}


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise click.UsageError(f"{flag} expects comma-separated integers, got {text!r}")


@click.group()
def main() -> None:
    """Active anomaly detection runs, dataset synthesis, and the audit service."""


@main.command(name="run")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model", required=True,
              type=click.Choice(sorted(_CLI_KIND)), help="Model kind.")
@click.option("--budget", required=True, type=int, help="Total labels to spend.")
@click.option("--k", type=int, default=None, help="Labels per round (default: auto).")
@click.option("--seeds", default="0", show_default=True,
              help="Comma-separated seeds; one run each.")
@click.option("--expert", type=click.Choice(["oracle"]), default="oracle",
              show_default=True, help="Only the simulated oracle runs offline; "
              "use `serve` for human auditing.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--steps-pre", type=int, default=5000, show_default=True)
@click.option("--steps-active", type=int, default=100, show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.option("--hidden", default="256,64,8", show_default=True,
              help="Hidden layer widths; the last is the latent width.")
@click.option("--phi", type=float, default=0.1, show_default=True,
              help="Input corruption standard deviation (denoising models).")
@click.option("--policy", type=click.Choice(["switch-on-first-positive",
              "always-base", "always-uai"]), default="switch-on-first-positive",
              show_default=True)
def run_command(dataset_path, model, budget, k, seeds, expert, out_dir,
                steps_pre, steps_active, batch_size, lr, hidden, phi, policy):
    """Execute seeded oracle runs and write result + report files."""
    seed_list = _parse_int_list(seeds, "--seeds")
    if not seed_list:
        raise click.UsageError("--seeds must name at least one seed")
    hidden_sizes = tuple(_parse_int_list(hidden, "--hidden"))
    if budget < 0:
        raise click.UsageError(f"--budget must be >= 0, got {budget}")
    if k is not None and budget > 0 and k > budget:
        raise click.UsageError(
            f"--k ({k}) must not exceed --budget ({budget})"
        )

    dataset = open_dataset(dataset_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    results = []
    for seed in seed_list:
        config = RunConfig(
            model_kind=_CLI_KIND[model],
            budget=budget,
            k=k,
            steps_pre=steps_pre,
            steps_active=steps_active,
            learning_rate=lr,
            batch_size=batch_size,
            hidden_sizes=hidden_sizes,
            noise_phi=phi,
            seed=seed,
            selection_policy=policy,
        )
        try:
            config = config.resolve(dataset)
        except ConfigError as exc:
            raise click.UsageError(str(exc))
        try:
            result = run_active(None, dataset, OracleExpert(dataset), config)
        except (TrainingDiverged, UsageError) as exc:
            click.echo(f"run aborted: {exc}", err=True)
            sys.exit(3)
        target = out / f"run_{model}_seed{seed}.json"
        target.write_text(result.to_json())
        found = result.curve[-1][1] if result.curve else 0
        click.echo(f"seed {seed}: {found} anomalies in {budget} labels -> {target}")
        results.append(result)

    curves = {
        f"{model}-seed{r.config['seed']}": evaluation.discovery_curve(r)
        for r in results
    }
    bands = {}
    if len(results) >= 2:
        bands[model] = evaluation.aggregate_seeds(results)
    evaluation.export_report(out, curves=curves, bands=bands, fmt="json")
    evaluation.export_report(out, curves=curves, bands=bands, fmt="csv")
    click.echo(f"report written to {out}")


@main.command(name="synthesize")
@click.option("--mode", required=True,
              type=click.Choice(["reduced-class", "hard", "two-regime", "blobs"]))
@click.option("--base", "base_path", type=click.Path(exists=True), default=None,
              help="Base dataset container (.npz/.csv) for reduced-class/hard.")
@click.option("--idx-images", type=click.Path(exists=True), default=None,
              help="IDX image file to use as the base (with --idx-labels).")
@click.option("--idx-labels", type=click.Path(exists=True), default=None)
@click.option("--classes", default=None, help="Anomaly classes, e.g. 0 or 0,1,2.")
@click.option("--keep", type=float, default=0.1, show_default=True,
              help="Fraction of each anomaly class kept.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--subsample", type=float, default=None,
              help="Stratified subsample fraction applied after synthesis.")
@click.option("--out", "out_path", required=True, type=click.Path())
def synthesize_command(mode, base_path, idx_images, idx_labels, classes, keep,
                       seed, subsample, out_path):
    """Build an anomaly benchmark dataset and save its container."""
    rng = np.random.default_rng(seed)

    if mode in ("reduced-class", "hard"):
        if idx_images or idx_labels:
            if not (idx_images and idx_labels):
                raise click.UsageError("--idx-images and --idx-labels go together")
            base = load_idx(idx_images, idx_labels)
        elif base_path:
            base = open_dataset(base_path)
        else:
            raise click.UsageError(f"--mode {mode} needs --base or --idx-images/--idx-labels")
        try:
            if mode == "reduced-class":
                if classes is None:
                    raise click.UsageError("--mode reduced-class needs --classes")
                spec = SyntheticSpec(
                    mode="reduced_class",
                    anomaly_classes=tuple(_parse_int_list(classes, "--classes")),
                    keep_fraction=keep,
                    relabel_rng_seed=seed,
                )
                dataset = synthesize_reduced_class(base, spec, rng)
            else:
                spec = SyntheticSpec(mode="hard", relabel_rng_seed=seed)
                dataset = synthesize_hard(base, spec, rng)
        except ValueError as exc:
            raise click.UsageError(str(exc))
    elif mode == "two-regime":
        dataset = two_regime_mixture(seed=seed)
    else:
        dataset = synthetic_blobs(num_classes=10, per_class=200, dim=16, seed=seed)

    if subsample is not None:
        dataset = stratified_subsample(dataset, subsample, rng)
        dataset.meta["subsample_seed"] = seed

    save_dataset(dataset, out_path)
    stats = dataset_stats(dataset)
    fraction = "unknown" if stats.anomaly_fraction is None else f"{stats.anomaly_fraction:.4f}"
    click.echo(
        f"{out_path}: {stats.n} points, dim {stats.dim}, "
        f"{stats.num_classes} classes, anomaly fraction {fraction}"
    )


@main.command(name="evaluate")
@click.option("--runs", "run_files", required=True, multiple=True,
              type=click.Path(exists=True), help="Run result JSON files.")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None,
              help="Dataset container; enables F1 at the contamination rate.")
@click.option("--rho", type=float, default=None,
              help="Contamination rate for F1 (default: the dataset's own).")
@click.option("--out", "out_dir", required=True, type=click.Path())
def evaluate_command(run_files, dataset_path, rho, out_dir):
    """Aggregate run results into curves, seed bands, and optional F1."""
    from .loop import LabelStore, RunResult

    results = []
    for path in run_files:
        payload = json.loads(Path(path).read_text())
        results.append(RunResult.from_dict(payload))

    by_model: dict[str, list] = {}
    for result in results:
        by_model.setdefault(result.config["model_kind"], []).append(result)

    curves = {}
    bands = {}
    for kind, group in by_model.items():
        for result in group:
            curves[f"{kind}-seed{result.config['seed']}"] = evaluation.discovery_curve(result)
        if len(group) >= 2:
            bands[kind] = evaluation.aggregate_seeds(group)

    f1s = {}
    if dataset_path:
        dataset = open_dataset(dataset_path)
        if dataset.anomaly_truth is None:
            raise click.UsageError("F1 needs a dataset with anomaly truth")
        contamination = rho if rho is not None else float(dataset.anomaly_truth.mean())
        if not 0.0 < contamination < 1.0:
            raise click.UsageError(f"contamination rate {contamination} is not in (0, 1)")
        for kind, group in by_model.items():
            values = []
            for result in group:
                store = LabelStore()
                for rnd in result.rounds:
                    store.extend(zip(rnd.selected, rnd.labels))
                scores = result.final_scores["head"] or result.final_scores["base"]
                values.append(
                    evaluation.f1_at_contamination(
                        np.asarray(scores), store, dataset.anomaly_truth, contamination
                    )
                )
            f1s[kind] = float(np.mean(values))

    written = evaluation.export_report(out_dir, curves=curves, bands=bands, f1s=f1s, fmt="json")
    written += evaluation.export_report(out_dir, curves=curves, bands=bands, f1s=f1s, fmt="csv")
    for path in written:
        click.echo(str(path))


@main.command(name="serve")
@click.option("--data-dir", required=True, type=click.Path(),
              envvar="ACTIVEANOM_DATA_DIR",
              help="State directory (env: ACTIVEANOM_DATA_DIR).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--concurrency", type=int, default=1, show_default=True,
              help="Training runs allowed to execute at once.")
def serve_command(data_dir, host, port, concurrency):
    """Serve the HTTP API that hosts runs and human audit queues."""
    import uvicorn

    from .service import create_app

    app = create_app(data_dir, concurrency=concurrency)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
