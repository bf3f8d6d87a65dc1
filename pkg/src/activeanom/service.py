"""HTTP service hosting runs with persistence and resumability.

Runs execute on a small worker pool (one training run at a time by
default). An oracle run drives itself to completion; a human run parks in
``AWAITING_LABELS`` at every round with its queue persisted, and resumes
when labels arrive through the API. All state lives in plain files under
the data directory, so a restarted service picks up every run where it
stopped: parked runs stay parked, interrupted training runs are re-driven
from their last checkpoint.

Endpoints: ``POST /datasets``, ``GET /datasets``, ``POST /runs``,
``GET /runs/{id}``, ``GET /runs/{id}/queue``, ``POST /runs/{id}/labels``,
``GET /runs/{id}/metrics``. Mutations accept idempotency keys and replay
their original acknowledgment on retry. Queue and metrics payloads never
contain ground-truth fields; anomaly counts in metrics are sums of the
labels the expert itself supplied.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .checkpoint import load_run_checkpoint, read_checkpoint_meta, save_run_checkpoint
from .data import Dataset, dataset_stats, open_dataset
from .loop import ActiveRun, ConfigError, OracleExpert, Parked, RunConfig
from .nn.optim import TrainingDiverged

STATUSES = ("PRETRAINING", "TRAINING", "AWAITING_LABELS", "DONE", "ABORTED")

_ALLOWED = {
    "PRETRAINING": {"TRAINING", "ABORTED"},
    "TRAINING": {"AWAITING_LABELS", "DONE", "ABORTED"},
    "AWAITING_LABELS": {"TRAINING", "ABORTED"},
    "DONE": set(),
    "ABORTED": set(),
}


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True))
    os.replace(tmp, path)


class _QueuedExpert:
    """Answers one pending round from stored submissions, then parks."""

    def __init__(self, answers_by_round: dict):
        self._answers = answers_by_round

    def audit(self, indices, pending):
        stored = self._answers.get(str(pending.round_no))
        if stored is None:
            return None
        lookup = {int(item["index"]): int(item["label"]) for item in stored}
        return [lookup[int(i)] for i in indices]


class RunManager:
    """Owns every run's state machine; one lock per run, files as truth."""

    def __init__(self, data_dir, concurrency: int = 1):
        self.data_dir = Path(data_dir)
        (self.data_dir / "runs").mkdir(parents=True, exist_ok=True)
        (self.data_dir / "datasets").mkdir(parents=True, exist_ok=True)
        self._executor = ThreadPoolExecutor(max_workers=concurrency)
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.RLock()
        self._dataset_cache: dict[str, Dataset] = {}
        self.recover()

    # -- small helpers -------------------------------------------------------

    def _run_dir(self, run_id: str) -> Path:
        return self.data_dir / "runs" / run_id

    def _lock(self, run_id: str) -> threading.RLock:
        with self._registry_lock:
            return self._locks.setdefault(run_id, threading.RLock())

    def _record_path(self, run_id: str) -> Path:
        return self._run_dir(run_id) / "record.json"

    def _read_record(self, run_id: str) -> dict:
        path = self._record_path(run_id)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no run {run_id}")
        return json.loads(path.read_text())

    def _write_record(self, run_id: str, record: dict) -> None:
        _write_json(self._record_path(run_id), record)

    def _transition(self, record: dict, new_status: str) -> None:
        current = record["status"]
        if new_status != current and new_status not in _ALLOWED[current]:
            raise RuntimeError(f"illegal status transition {current} -> {new_status}")
        record["status"] = new_status

    # -- datasets ------------------------------------------------------------

    def _datasets_index_path(self) -> Path:
        return self.data_dir / "datasets" / "index.json"

    def _datasets_index(self) -> dict:
        path = self._datasets_index_path()
        return json.loads(path.read_text()) if path.exists() else {}

    def register_dataset(self, name: str, path: str) -> dict:
        try:
            dataset = open_dataset(path)
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail=f"no dataset file at {path}")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        stats = dataset_stats(dataset)
        entry = {
            "name": name,
            "path": str(Path(path).resolve()),
            "fingerprint": dataset.fingerprint(),
            "n": stats.n,
            "dim": stats.dim,
            "num_classes": stats.num_classes,
            "anomaly_fraction": stats.anomaly_fraction,
            "has_truth": dataset.anomaly_truth is not None,
            "image_shape": dataset.meta.get("image_shape"),
        }
        with self._registry_lock:
            index = self._datasets_index()
            index[name] = entry
            _write_json(self._datasets_index_path(), index)
            self._dataset_cache[name] = dataset
        return entry

    def list_datasets(self) -> list[dict]:
        return sorted(self._datasets_index().values(), key=lambda e: e["name"])

    def _dataset(self, name: str) -> Dataset:
        with self._registry_lock:
            if name in self._dataset_cache:
                return self._dataset_cache[name]
            index = self._datasets_index()
            if name not in index:
                raise HTTPException(status_code=404, detail=f"no dataset {name!r}")
            dataset = open_dataset(index[name]["path"])
            self._dataset_cache[name] = dataset
            return dataset

    # -- run lifecycle ---------------------------------------------------------

    def create_run(
        self,
        dataset_name: str,
        config: RunConfig,
        expert: str,
        idempotency_key: str | None = None,
    ) -> str:
        if expert not in ("oracle", "human"):
            raise HTTPException(status_code=400, detail=f"unknown expert {expert!r}")
        dataset = self._dataset(dataset_name)
        if expert == "oracle" and dataset.anomaly_truth is None:
            raise HTTPException(
                status_code=400, detail="oracle runs need a dataset with anomaly truth"
            )
        try:
            config.resolve(dataset)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        with self._registry_lock:
            if idempotency_key:
                for existing in self.list_runs():
                    if existing.get("idempotency_key") == idempotency_key:
                        return existing["run_id"]
            run_id = uuid.uuid4().hex[:12]
            self._run_dir(run_id).mkdir(parents=True)
            record = {
                "run_id": run_id,
                "status": "PRETRAINING",
                "expert": expert,
                "dataset": dataset_name,
                "config": config.to_dict(),
                "idempotency_key": idempotency_key,
                "spent": 0,
                "found": 0,
                "pending": None,
                "answers": {},
                "label_acks": {},
                "error": None,
            }
            self._write_record(run_id, record)
        self._executor.submit(self._drive, run_id)
        return run_id

    def list_runs(self) -> list[dict]:
        runs = []
        for run_dir in sorted((self.data_dir / "runs").iterdir()):
            record_path = run_dir / "record.json"
            if record_path.exists():
                runs.append(json.loads(record_path.read_text()))
        return runs

    def recover(self) -> None:
        """Re-drive runs that were mid-training when the service stopped."""
        runs_dir = self.data_dir / "runs"
        if not runs_dir.exists():
            return
        for record in self.list_runs():
            if record["status"] in ("PRETRAINING", "TRAINING"):
                self._executor.submit(self._drive, record["run_id"])

    def _drive(self, run_id: str) -> None:
        lock = self._lock(run_id)
        with lock:
            try:
                self._drive_locked(run_id)
            except TrainingDiverged as exc:
                record = self._read_record(run_id)
                self._transition(record, "ABORTED")
                record["error"] = str(exc)
                self._write_record(run_id, record)
            except Exception as exc:  # keep the record honest on any failure
                record = self._read_record(run_id)
                if record["status"] not in ("DONE", "ABORTED"):
                    self._transition(record, "ABORTED")
                    record["error"] = f"{type(exc).__name__}: {exc}"
                    self._write_record(run_id, record)

    def _drive_locked(self, run_id: str) -> None:
        record = self._read_record(run_id)
        if record["status"] in ("DONE", "ABORTED", "AWAITING_LABELS"):
            return
        dataset = self._dataset(record["dataset"])
        config = RunConfig.from_dict(record["config"])
        checkpoint_path = self._run_dir(run_id) / "checkpoint.npz"

        if checkpoint_path.exists():
            run = load_run_checkpoint(checkpoint_path, dataset)
        else:
            run = ActiveRun(dataset, config)

        if run.phase == "created":
            record = self._read_record(run_id)
            self._transition(record, "PRETRAINING")
            self._write_record(run_id, record)
            run.pretrain()
            save_run_checkpoint(checkpoint_path, run)

        record = self._read_record(run_id)
        self._transition(record, "TRAINING")
        self._write_record(run_id, record)

        if record["expert"] == "oracle":
            expert = OracleExpert(dataset)
        else:
            expert = _QueuedExpert(record.get("answers", {}))

        outcome = run.advance(expert, checkpoint_path=checkpoint_path)

        record = self._read_record(run_id)
        record["spent"] = run.spent
        record["found"] = run.rounds[-1].cumulative_found if run.rounds else 0
        if isinstance(outcome, Parked):
            queue = self._queue_payload(run_id, record, dataset, outcome.pending)
            record["pending"] = queue
            self._transition(record, "AWAITING_LABELS")
            self._write_record(run_id, record)
        else:
            result_path = self._run_dir(run_id) / "result.json"
            tmp = result_path.with_name(result_path.name + ".tmp")
            tmp.write_text(outcome.to_json())
            os.replace(tmp, result_path)
            record["pending"] = None
            self._transition(record, "DONE")
            self._write_record(run_id, record)

    def _queue_payload(self, run_id, record, dataset, pending) -> dict:
        items = []
        image_shape = dataset.meta.get("image_shape")
        for rank, index in enumerate(pending.selected):
            items.append(
                {
                    "index": int(index),
                    "rank": rank + 1,
                    "base_score": pending.base_scores[rank],
                    "head_score": None
                    if pending.head_scores is None
                    else pending.head_scores[rank],
                    "features": [float(v) for v in dataset.features[index]],
                    "image_shape": image_shape,
                }
            )
        return {
            "run_id": run_id,
            "round": pending.round_no,
            "ranked_by": pending.ranked_by,
            "k": len(pending.selected),
            "items": items,
        }

    # -- API surface -----------------------------------------------------------

    def get_run(self, run_id: str) -> dict:
        record = self._read_record(run_id)
        return {
            "run_id": record["run_id"],
            "status": record["status"],
            "expert": record["expert"],
            "dataset": record["dataset"],
            "config": record["config"],
            "budget_total": record["config"]["budget"],
            "budget_spent": record["spent"],
            "error": record["error"],
        }

    def get_queue(self, run_id: str) -> dict:
        record = self._read_record(run_id)
        if record["status"] != "AWAITING_LABELS":
            raise HTTPException(
                status_code=409,
                detail=f"run is {record['status']}, not AWAITING_LABELS",
            )
        return record["pending"]

    def submit_labels(
        self, run_id: str, answers: list[dict], idempotency_key: str | None = None
    ) -> dict:
        lock = self._lock(run_id)
        with lock:
            record = self._read_record(run_id)
            if idempotency_key and idempotency_key in record.get("label_acks", {}):
                return record["label_acks"][idempotency_key]
            got = [int(a["index"]) for a in answers]
            for round_key, stored in record.get("answers", {}).items():
                if sorted(got) == sorted(int(s["index"]) for s in stored):
                    raise HTTPException(
                        status_code=409,
                        detail=f"round {round_key} was already answered",
                    )
            if record["status"] != "AWAITING_LABELS":
                raise HTTPException(
                    status_code=409,
                    detail=f"run is {record['status']}, not AWAITING_LABELS",
                )
            pending = record["pending"]
            expected = [item["index"] for item in pending["items"]]
            if sorted(got) != sorted(expected) or len(got) != len(set(got)):
                unexpected = sorted(set(got) - set(expected))
                missing = sorted(set(expected) - set(got))
                raise HTTPException(
                    status_code=400,
                    detail=(
                        "labels must cover exactly the pending queue; "
                        f"unexpected={unexpected} missing={missing}"
                    ),
                )
            for a in answers:
                if int(a["label"]) not in (0, 1):
                    raise HTTPException(
                        status_code=400, detail=f"labels are 0 or 1, got {a['label']}"
                    )
            round_key = str(pending["round"])
            record.setdefault("answers", {})[round_key] = [
                {"index": int(a["index"]), "label": int(a["label"])} for a in answers
            ]
            record["pending"] = None
            self._transition(record, "TRAINING")
            ack = {
                "run_id": run_id,
                "round": pending["round"],
                "accepted": len(answers),
            }
            if idempotency_key:
                record.setdefault("label_acks", {})[idempotency_key] = ack
            self._write_record(run_id, record)
        self._executor.submit(self._drive, run_id)
        return ack

    def get_metrics(self, run_id: str) -> dict:
        record = self._read_record(run_id)
        rounds: list[dict] = []
        curve: list[list[int]] = []
        checkpoint_path = self._run_dir(run_id) / "checkpoint.npz"
        if checkpoint_path.exists():
            meta = read_checkpoint_meta(checkpoint_path)
            spent = found = 0
            for rnd in meta["rounds"]:
                for label in rnd["labels"]:
                    spent += 1
                    found += int(label)
                    curve.append([spent, found])
                rounds.append(
                    {
                        "round": rnd["round_no"],
                        "k": len(rnd["selected"]),
                        "found_in_round": sum(rnd["labels"]),
                        "cumulative_found": rnd["cumulative_found"],
                        "ranked_by": rnd["ranked_by"],
                    }
                )
        anomalies_found = curve[-1][1] if curve else 0
        return {
            "run_id": run_id,
            "status": record["status"],
            "budget_total": record["config"]["budget"],
            "budget_spent": curve[-1][0] if curve else 0,
            "anomalies_found": anomalies_found,
            "curve": curve,
            "rounds": rounds,
        }

    def shutdown(self) -> None:
        self._executor.shutdown(wait=True)


# ---------------------------------------------------------------------------
# FastAPI wiring


class DatasetRegistration(BaseModel):
    name: str
    path: str


class RunCreation(BaseModel):
    dataset: str
    expert: str = "oracle"
    config: dict
    idempotency_key: str | None = None


class LabelAnswer(BaseModel):
    index: int
    label: int


class LabelSubmission(BaseModel):
    labels: list[LabelAnswer] = Field(min_length=1)
    idempotency_key: str | None = None


def create_app(data_dir, concurrency: int = 1) -> FastAPI:
    app = FastAPI(title="activeanom service")
    # the audit console is a static page served from anywhere local
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    manager = RunManager(data_dir, concurrency=concurrency)
    app.state.manager = manager

    @app.post("/datasets")
    def register_dataset(body: DatasetRegistration):
        return manager.register_dataset(body.name, body.path)

    @app.get("/datasets")
    def list_datasets():
        return manager.list_datasets()

    @app.post("/runs")
    def create_run(body: RunCreation):
        try:
            config = RunConfig.from_dict(body.config)
        except (TypeError, ConfigError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        run_id = manager.create_run(
            body.dataset, config, body.expert, body.idempotency_key
        )
        return {"run_id": run_id}

    @app.get("/runs")
    def list_runs():
        return [manager.get_run(r["run_id"]) for r in manager.list_runs()]

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        return manager.get_run(run_id)

    @app.get("/runs/{run_id}/queue")
    def get_queue(run_id: str):
        return manager.get_queue(run_id)

    @app.post("/runs/{run_id}/labels")
    def submit_labels(run_id: str, body: LabelSubmission):
        return manager.submit_labels(
            run_id,
            [{"index": a.index, "label": a.label} for a in body.labels],
            body.idempotency_key,
        )

    @app.get("/runs/{run_id}/metrics")
    def get_metrics(run_id: str):
        return manager.get_metrics(run_id)

    return app
