"""The budgeted expert-in-the-loop training procedure.

One run is a sequential state machine: pretrain the base objective on
uniform batches, then repeat rounds of {train the joint objective, rank
every instance, send the top-k unlabeled for audit, absorb the returned
labels} until the label budget is spent. Experts may answer synchronously
(the simulated oracle) or park the run: an expert returning ``None`` leaves
the run resumable at exactly the pending selection, which is how the
service hosts human auditors.

Ranking policy: a freshly attached feedback head is all zeros and emits a
constant 0.5, carrying no signal, so by default rounds rank by the base
score until the store holds at least one positive label and by the head's
probability afterwards ("switch-on-first-positive"). The alternatives
("always-base", "always-uai") are configurable.

Determinism: all randomness (init, batch sampling, input corruption) flows
from one seed through fixed-order draws, so identical configurations
reproduce bit-identical results, including across checkpoint/resume.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .models import MODEL_KINDS, CompositeModel, UsageError, build_model
from .nn.optim import RmsProp

RESULT_SCHEMA_VERSION = 1

SELECTION_POLICIES = ("switch-on-first-positive", "always-base", "always-uai")


class ConfigError(ValueError):
    """A run configuration violates its invariants."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run, including every tunable default.

    ``k=None`` means auto: 3 when the dataset is a benchmark with fewer
    than 100 known anomalies, else 10. An explicit value always wins.
    """

    model_kind: str
    budget: int
    k: int | None = None
    steps_pre: int = 5000
    steps_active: int = 100
    learning_rate: float = 0.01
    batch_size: int = 256
    hidden_sizes: tuple[int, ...] = (256, 64, 8)
    noise_phi: float = 0.1
    seed: int = 0
    selection_policy: str = "switch-on-first-positive"
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-10
    decoder_output: str = "auto"

    def resolve(self, dataset: Dataset) -> "RunConfig":
        """Validate against a dataset and fill the auto fields."""
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if self.selection_policy not in SELECTION_POLICIES:
            raise ConfigError(f"unknown selection policy {self.selection_policy!r}")
        if self.budget < 0:
            raise ConfigError(f"budget must be >= 0, got {self.budget}")
        if self.budget > len(dataset):
            raise ConfigError(
                f"budget {self.budget} exceeds dataset size {len(dataset)}"
            )
        k = self.k
        if k is None:
            truth = dataset.anomaly_truth
            k = 3 if truth is not None and int(truth.sum()) < 100 else 10
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        if self.budget > 0 and k > self.budget:
            raise ConfigError(f"k ({k}) must not exceed budget ({self.budget})")
        if self.steps_pre < 0 or self.steps_active < 0:
            raise ConfigError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.noise_phi < 0:
            raise ConfigError("noise_phi must be >= 0")
        decoder_output = self.decoder_output
        if decoder_output == "auto":
            scaling = dataset.meta.get("scaling")
            decoder_output = "sigmoid" if scaling == "unit_interval" else "linear"
        if decoder_output not in ("linear", "sigmoid"):
            raise ConfigError(f"unknown decoder output {decoder_output!r}")
        return replace(self, k=k, decoder_output=decoder_output)

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "budget": self.budget,
            "k": self.k,
            "steps_pre": self.steps_pre,
            "steps_active": self.steps_active,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "hidden_sizes": list(self.hidden_sizes),
            "noise_phi": self.noise_phi,
            "seed": self.seed,
            "selection_policy": self.selection_policy,
            "rms_decay": self.rms_decay,
            "rms_epsilon": self.rms_epsilon,
            "decoder_output": self.decoder_output,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        data = dict(payload)
        data["hidden_sizes"] = tuple(data.get("hidden_sizes", (256, 64, 8)))
        return cls(**data)


class LabelStore:
    """Audited labels keyed by dataset index, in audit order.

    An index can be audited at most once; a second submission raises.
    """

    def __init__(self):
        self._labels: dict[int, int] = {}
        self._order: list[int] = []

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, index: int) -> bool:
        return int(index) in self._labels

    def add(self, index: int, label: int) -> None:
        index, label = int(index), int(label)
        if label not in (0, 1):
            raise ValueError(f"labels are 0 or 1, got {label}")
        if index in self._labels:
            raise ValueError(f"index {index} was already audited")
        self._labels[index] = label
        self._order.append(index)

    def extend(self, pairs) -> None:
        for index, label in pairs:
            self.add(index, label)

    def labeled_indices(self) -> np.ndarray:
        return np.array(self._order, dtype=np.int64)

    def get(self, index: int) -> int:
        return self._labels[int(index)]

    @property
    def positives(self) -> int:
        return sum(self._labels.values())

    def audit_sequence(self) -> list[tuple[int, int]]:
        return [(i, self._labels[i]) for i in self._order]

    def labels_for(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(labeled mask over the batch rows, targets for the masked rows)."""
        mask = np.fromiter(
            (int(i) in self._labels for i in indices), dtype=bool, count=len(indices)
        )
        targets = np.array(
            [self._labels[int(i)] for i in indices[mask]], dtype=np.float64
        )
        return mask, targets

    def to_dict(self) -> dict:
        return {"order": self._order, "labels": {str(k): v for k, v in self._labels.items()}}

    @classmethod
    def from_dict(cls, payload: dict) -> "LabelStore":
        store = cls()
        labels = payload["labels"]
        for index in payload["order"]:
            store.add(index, labels[str(index)])
        return store


@dataclass
class AuditRound:
    """One completed audit round."""

    round_no: int
    selected: list[int]
    ranked_by: str  # "base" | "head"
    ranking_scores: list[float]
    base_scores: list[float]
    head_scores: list[float] | None
    labels: list[int]
    cumulative_found: int

    def to_dict(self) -> dict:
        return {
            "round_no": self.round_no,
            "selected": self.selected,
            "ranked_by": self.ranked_by,
            "ranking_scores": self.ranking_scores,
            "base_scores": self.base_scores,
            "head_scores": self.head_scores,
            "labels": self.labels,
            "cumulative_found": self.cumulative_found,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AuditRound":
        return cls(**payload)


@dataclass
class PendingSelection:
    """A selection awaiting expert labels (the park point of a round)."""

    round_no: int
    selected: list[int]
    ranked_by: str
    ranking_scores: list[float]
    base_scores: list[float]
    head_scores: list[float] | None

    def to_dict(self) -> dict:
        return {
            "round_no": self.round_no,
            "selected": self.selected,
            "ranked_by": self.ranked_by,
            "ranking_scores": self.ranking_scores,
            "base_scores": self.base_scores,
            "head_scores": self.head_scores,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PendingSelection":
        return cls(**payload)


@dataclass
class RunResult:
    """The complete, serializable outcome of a run. Contains no wall-clock."""

    config: dict
    dataset_name: str
    dataset_fingerprint: str
    rounds: list[AuditRound]
    curve: list[tuple[int, int]]
    final_scores: dict
    schema_version: int = RESULT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "dataset_name": self.dataset_name,
            "dataset_fingerprint": self.dataset_fingerprint,
            "rounds": [r.to_dict() for r in self.rounds],
            "curve": [list(point) for point in self.curve],
            "final_scores": self.final_scores,
        }

    def to_json(self) -> str:
        import json

        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, payload: dict) -> "RunResult":
        return cls(
            config=payload["config"],
            dataset_name=payload["dataset_name"],
            dataset_fingerprint=payload["dataset_fingerprint"],
            rounds=[AuditRound.from_dict(r) for r in payload["rounds"]],
            curve=[tuple(point) for point in payload["curve"]],
            final_scores=payload["final_scores"],
            schema_version=payload["schema_version"],
        )


def select_top_k(scores: np.ndarray, labeled, k: int) -> list[int]:
    """The k unlabeled indices with the highest scores.

    Descending by score, ties broken by ascending index; returns fewer than
    k only when fewer unlabeled instances remain.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if k < 0:
        raise ValueError("k must be >= 0")
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    labeled_set = set(int(i) for i in labeled)
    picked: list[int] = []
    for idx in order:
        if len(picked) == k:
            break
        if int(idx) in labeled_set:
            continue
        picked.append(int(idx))
    return picked


class OracleExpert:
    """Simulated auditor answering from the dataset's hidden ground truth."""

    def __init__(self, dataset: Dataset):
        if dataset.anomaly_truth is None:
            raise UsageError("oracle expert needs a dataset with anomaly truth")
        self._truth = dataset.anomaly_truth
        self.audit_calls = 0
        self.labels_served = 0

    def audit(self, indices, pending: PendingSelection | None = None) -> list[int]:
        out = []
        for i in indices:
            i = int(i)
            if not 0 <= i < self._truth.shape[0]:
                raise IndexError(f"index {i} outside the dataset")
            out.append(int(self._truth[i]))
        self.audit_calls += 1
        self.labels_served += len(out)
        return out


@dataclass
class Parked:
    """Returned when the expert left the current selection unanswered."""

    pending: PendingSelection


class ActiveRun:
    """Resumable execution of the budgeted loop for one model and dataset."""

    def __init__(
        self,
        dataset: Dataset,
        config: RunConfig,
        model: CompositeModel | None = None,
    ):
        self.dataset = dataset
        self.config = config.resolve(dataset)
        seq = np.random.SeedSequence(self.config.seed)
        init_seed, train_seed = seq.spawn(2)
        init_rng = np.random.default_rng(init_seed)
        self.rng = np.random.default_rng(train_seed)
        if model is None:
            model = build_model(
                self.config.model_kind,
                input_dim=dataset.dim,
                hidden_sizes=self.config.hidden_sizes,
                rng=init_rng,
                num_classes=dataset.num_classes,
                noise_phi=self.config.noise_phi,
                decoder_output=self.config.decoder_output,
            )
        if model.needs_class_labels and dataset.class_labels is None:
            raise UsageError("label-prediction models need a dataset with class labels")
        self.model = model
        self.optimizer = RmsProp(
            learning_rate=self.config.learning_rate,
            decay=self.config.rms_decay,
            epsilon=self.config.rms_epsilon,
        )
        self.store = LabelStore()
        self.rounds: list[AuditRound] = []
        self.pending: PendingSelection | None = None
        self.phase = "created"  # created -> pretrained -> done
        self.spent = 0

    # -- training helpers ----------------------------------------------------

    def _train_batch_indices(self) -> np.ndarray:
        """Uniform draw plus the labeled set (all of it while it fits)."""
        n = len(self.dataset)
        batch = self.rng.integers(0, n, size=self.config.batch_size)
        if len(self.store) == 0:
            return batch
        labeled = self.store.labeled_indices()
        if len(labeled) <= self.config.batch_size:
            return np.concatenate([batch, labeled])
        half = self.config.batch_size // 2
        picked = self.rng.choice(labeled, size=half, replace=False)
        return np.concatenate([batch[:half], picked])

    def _train_steps(self, steps: int) -> None:
        for _ in range(steps):
            idx = self._train_batch_indices()
            batch = self.dataset.batch(idx)
            mask, targets = self.store.labels_for(batch.indices)
            self.model.train_step(
                batch.features,
                batch.class_labels,
                mask,
                targets,
                self.optimizer,
                self.rng,
            )

    def pretrain(self) -> None:
        """Base-objective-only training on uniform batches; no expert involved."""
        if self.phase != "created":
            raise UsageError(f"pretrain already ran (phase={self.phase})")
        if len(self.store) != 0:
            raise UsageError("pretrain requires an empty label store")
        self._train_steps(self.config.steps_pre)
        self.phase = "pretrained"

    # -- ranking and selection -------------------------------------------------

    def _ranking(self) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, str]:
        scores = self.model.score_all(self.dataset.features, self.dataset.class_labels)
        if self.model.head is None:
            return scores.base, scores.base, None, "base"
        policy = self.config.selection_policy
        use_head = policy == "always-uai" or (
            policy == "switch-on-first-positive" and self.store.positives > 0
        )
        ranking = scores.head if use_head else scores.base
        return ranking, scores.base, scores.head, ("head" if use_head else "base")

    def _select(self) -> PendingSelection | None:
        want = min(self.config.k, self.config.budget - self.spent)
        if want <= 0:
            return None
        ranking, base, head, ranked_by = self._ranking()
        chosen = select_top_k(ranking, self.store.labeled_indices(), want)
        if not chosen:
            return None
        return PendingSelection(
            round_no=len(self.rounds) + 1,
            selected=chosen,
            ranked_by=ranked_by,
            ranking_scores=[float(ranking[i]) for i in chosen],
            base_scores=[float(base[i]) for i in chosen],
            head_scores=None if head is None else [float(head[i]) for i in chosen],
        )

    # -- the loop ---------------------------------------------------------------

    def advance(self, expert, checkpoint_path=None) -> RunResult | Parked:
        """Drive the run forward until done or the expert parks it.

        When ``checkpoint_path`` is given, the state is persisted after
        pretraining and after every round, and at every park point.
        """
        from .checkpoint import save_run_checkpoint

        if self.phase == "created":
            self.pretrain()
            if checkpoint_path:
                save_run_checkpoint(checkpoint_path, self)
        while self.phase != "done":
            if self.pending is None:
                if self.spent >= self.config.budget:
                    break
                self._train_steps(self.config.steps_active)
                self.pending = self._select()
                if self.pending is None:
                    break
                if checkpoint_path:
                    save_run_checkpoint(checkpoint_path, self)
            answers = expert.audit(list(self.pending.selected), self.pending)
            if answers is None:
                return Parked(self.pending)
            self._absorb(answers)
            if checkpoint_path:
                save_run_checkpoint(checkpoint_path, self)
        self.phase = "done"
        result = self.result()
        if checkpoint_path:
            save_run_checkpoint(checkpoint_path, self)
        return result

    def _absorb(self, answers) -> None:
        pending = self.pending
        if pending is None:
            raise UsageError("no selection is awaiting labels")
        answers = [int(a) for a in answers]
        if len(answers) != len(pending.selected):
            raise ValueError(
                f"expected {len(pending.selected)} labels, got {len(answers)}"
            )
        self.store.extend(zip(pending.selected, answers))
        self.spent += len(answers)
        self.rounds.append(
            AuditRound(
                round_no=pending.round_no,
                selected=list(pending.selected),
                ranked_by=pending.ranked_by,
                ranking_scores=list(pending.ranking_scores),
                base_scores=list(pending.base_scores),
                head_scores=None
                if pending.head_scores is None
                else list(pending.head_scores),
                labels=answers,
                cumulative_found=(self.rounds[-1].cumulative_found if self.rounds else 0)
                + sum(answers),
            )
        )
        self.pending = None

    def submit_labels(self, answers) -> None:
        """Absorb labels for the pending selection (service-facing entry)."""
        self._absorb(answers)

    def discovery_curve(self) -> list[tuple[int, int]]:
        points: list[tuple[int, int]] = []
        spent = found = 0
        for rnd in self.rounds:
            for label in rnd.labels:
                spent += 1
                found += int(label)
                points.append((spent, found))
        return points

    def result(self) -> RunResult:
        scores = self.model.score_all(self.dataset.features, self.dataset.class_labels)
        final = {"base": [float(v) for v in scores.base]}
        final["head"] = (
            None if scores.head is None else [float(v) for v in scores.head]
        )
        return RunResult(
            config=self.config.to_dict(),
            dataset_name=str(self.dataset.meta.get("name", "dataset")),
            dataset_fingerprint=self.dataset.fingerprint(),
            rounds=list(self.rounds),
            curve=self.discovery_curve(),
            final_scores=final,
        )


def pretrain(model: CompositeModel, dataset: Dataset, config: RunConfig) -> CompositeModel:
    """Run only the unsupervised pretraining phase; returns the trained model."""
    run = ActiveRun(dataset, config, model=model)
    run.pretrain()
    return run.model


def run_active(
    model: CompositeModel | None,
    dataset: Dataset,
    expert,
    config: RunConfig,
    checkpoint_path=None,
) -> RunResult:
    """Execute a full run with a synchronous expert; parking is an error here."""
    run = ActiveRun(dataset, config, model=model)
    outcome = run.advance(expert, checkpoint_path=checkpoint_path)
    if isinstance(outcome, Parked):
        raise UsageError(
            "the expert parked the run; use ActiveRun.advance for resumable runs"
        )
    return outcome
