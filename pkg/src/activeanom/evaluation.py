"""Metrics over completed runs: discovery curves, seed bands, F1, snapshots.

Everything here is a pure function of run records and scores; nothing
mutates a model or a dataset.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .loop import RunResult
from .models import CompositeModel, UsageError

REPORT_SCHEMA_VERSION = 1


@dataclass
class DiscoveryCurve:
    """Cumulative true anomalies among audited instances per label spent."""

    points: list[tuple[int, int]]

    def __post_init__(self) -> None:
        spent_prev, found_prev = 0, 0
        for spent, found in self.points:
            if spent < spent_prev or found < found_prev:
                raise ValueError("discovery curve must be nondecreasing")
            if found > spent:
                raise ValueError("cannot find more anomalies than labels spent")
            spent_prev, found_prev = spent, found


@dataclass
class SeedBand:
    """Pointwise mean/min/max of several seeded runs' curves."""

    budgets: list[int]
    mean: list[float]
    low: list[int]
    high: list[int]


def discovery_curve(run: RunResult) -> DiscoveryCurve:
    """Recompute the curve from the audit log (one point per label spent)."""
    points: list[tuple[int, int]] = []
    spent = found = 0
    for rnd in run.rounds:
        for label in rnd.labels:
            spent += 1
            found += int(label)
            points.append((spent, found))
    return DiscoveryCurve(points)


def aggregate_seeds(runs: list[RunResult]) -> SeedBand:
    """Pointwise band across runs that differ only in their seed."""
    if len(runs) < 2:
        raise UsageError("a band needs at least two runs")
    reference = {k: v for k, v in runs[0].config.items() if k != "seed"}
    for run in runs[1:]:
        other = {k: v for k, v in run.config.items() if k != "seed"}
        if other != reference:
            raise UsageError("runs differ in more than the seed")
    curves = [discovery_curve(run).points for run in runs]
    budgets = [p[0] for p in curves[0]]
    for points in curves[1:]:
        if [p[0] for p in points] != budgets:
            raise UsageError("runs cover different budgets")
    found = np.array([[p[1] for p in points] for points in curves], dtype=np.int64)
    return SeedBand(
        budgets=budgets,
        mean=[float(v) for v in found.mean(axis=0)],
        low=[int(v) for v in found.min(axis=0)],
        high=[int(v) for v in found.max(axis=0)],
    )


def f1_at_contamination(
    scores: np.ndarray,
    label_store,
    truth: np.ndarray,
    rho: float,
) -> float:
    """F1 of the contamination-thresholded prediction set against the truth.

    The predicted-anomaly set is every audited positive plus the
    highest-scored unaudited instances, padded to exactly ceil(rho*N)
    members; audited normals are never predicted. When the audited
    positives alone exceed the quota they are all kept. F1 is 0 when
    precision+recall is 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    n = scores.shape[0]
    if truth.shape[0] != n:
        raise ValueError("scores and truth must align")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must be in (0, 1), got {rho}")

    audited = dict(label_store.audit_sequence())
    audited_pos = [i for i, y in audited.items() if y == 1]
    target = math.ceil(rho * n)

    predicted = set(audited_pos)
    fill = target - len(predicted)
    if fill > 0:
        order = np.lexsort((np.arange(n), -scores))
        for idx in order:
            if fill == 0:
                break
            idx = int(idx)
            if idx in audited:
                continue
            predicted.add(idx)
            fill -= 1

    true_set = set(int(i) for i in np.flatnonzero(truth == 1))
    tp = len(predicted & true_set)
    fp = len(predicted - true_set)
    fn = len(true_set - predicted)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


@dataclass
class LatentScoreSnapshot:
    """Per-instance (1-D latent, base score, truth) at a given budget."""

    budget_tag: int
    indices: list[int]
    latent: list[float]
    base_score: list[float]
    truth: list[int]


def latent_score_snapshot(
    model: CompositeModel, dataset, budget_tag: int
) -> LatentScoreSnapshot:
    """Clean-input latent/score pairs; requires a width-1 latent."""
    scores = model.score_all(dataset.features, dataset.class_labels)
    if scores.latent.shape[1] != 1:
        raise UsageError(
            f"snapshots need latent width 1, model has {scores.latent.shape[1]}"
        )
    if dataset.anomaly_truth is None:
        raise UsageError("snapshots need a dataset with anomaly truth")
    return LatentScoreSnapshot(
        budget_tag=budget_tag,
        indices=[int(i) for i in dataset.ids],
        latent=[float(v) for v in scores.latent[:, 0]],
        base_score=[float(v) for v in scores.base],
        truth=[int(v) for v in dataset.anomaly_truth],
    )


def export_report(
    out_dir,
    curves: dict[str, DiscoveryCurve] | None = None,
    bands: dict[str, SeedBand] | None = None,
    f1s: dict[str, float] | None = None,
    fmt: str = "json",
) -> list[Path]:
    """Write a report in the versioned schema; returns the files written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = curves or {}
    bands = bands or {}
    f1s = f1s or {}
    written: list[Path] = []

    if fmt == "json":
        payload = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "curves": {
                name: [list(p) for p in curve.points] for name, curve in curves.items()
            },
            "bands": {
                name: {
                    "budgets": band.budgets,
                    "mean": band.mean,
                    "min": band.low,
                    "max": band.high,
                }
                for name, band in bands.items()
            },
            "f1": f1s,
        }
        target = out_dir / "report.json"
        target.write_text(json.dumps(payload, sort_keys=True, indent=2))
        written.append(target)
    elif fmt == "csv":
        target = out_dir / "report.csv"
        with open(target, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["model", "budget", "mean", "min", "max"])
            for name, band in bands.items():
                for i, budget in enumerate(band.budgets):
                    writer.writerow(
                        [name, budget, band.mean[i], band.low[i], band.high[i]]
                    )
            for name, curve in curves.items():
                for spent, found in curve.points:
                    writer.writerow([name, spent, found, found, found])
        written.append(target)
        if f1s:
            f1_target = out_dir / "f1.csv"
            with open(f1_target, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["model", "f1"])
                for name, value in f1s.items():
                    writer.writerow([name, value])
            written.append(f1_target)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return written


def load_report(path) -> dict:
    """Read back a JSON report, validating the schema version."""
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(
            f"report schema {payload.get('schema_version')!r} is not supported"
        )
    return payload


def save_snapshot(snapshot: LatentScoreSnapshot, path) -> None:
    """Plot-ready snapshot file: one row per instance (index, l, s, truth)."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "latent", "base_score", "truth", "budget_tag"])
        for i in range(len(snapshot.indices)):
            writer.writerow(
                [
                    snapshot.indices[i],
                    snapshot.latent[i],
                    snapshot.base_score[i],
                    snapshot.truth[i],
                    snapshot.budget_tag,
                ]
            )
