"""Dataset ingestion, standardization, and anomaly benchmark synthesis.

A :class:`Dataset` couples a feature matrix with optional class labels,
optional hidden anomaly ground truth, and provenance metadata. Models only
ever see :class:`Batch` views, which carry features, class labels and
indices — never the truth column; truth is reserved for the simulated
expert and for evaluation.

Two synthesis modes build benchmarks out of an ordinary classification
dataset:

* ``reduced_class`` — a chosen set of classes is subsampled down to a
  fraction of its size; the survivors are flagged anomalous and their class
  labels are reassigned uniformly among the remaining classes. This plants
  a *clustered* anomaly regime: a coherent group whose labels lie.
* ``hard`` — a deliberately weak one-hidden-layer classifier is trained on
  the data and every instance it misclassifies is flagged anomalous,
  planting boundary/low-density anomalies instead.

Generators for self-contained synthetic bases (Gaussian class blobs, and a
2-D mixture containing both a dense anomaly cluster and isolated sparse
anomalies) let every benchmark run without any external files.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn.layers import mlp
from .nn.optim import RmsProp

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CONTAINER_SCHEMA_VERSION = 1


class FormatError(ValueError):
    """An input file violates its declared format."""


class SynthesisError(ValueError):
    """A synthesis request cannot produce a usable dataset."""


@dataclass(frozen=True)
class Batch:
    """The model-facing view of a set of instances. Carries no ground truth."""

    features: np.ndarray
    class_labels: np.ndarray | None
    indices: np.ndarray


@dataclass
class Dataset:
    """Feature matrix plus optional class labels and hidden anomaly truth."""

    features: np.ndarray
    class_labels: np.ndarray | None = None
    anomaly_truth: np.ndarray | None = None
    ids: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise FormatError(f"features must be 2-D, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise FormatError("features contain non-finite entries")
        n = self.features.shape[0]
        if self.class_labels is not None:
            self.class_labels = np.ascontiguousarray(self.class_labels, dtype=np.float64)
            if self.class_labels.shape[0] != n or self.class_labels.ndim != 2:
                raise FormatError("class_labels must be one-hot rows, one per instance")
        if self.anomaly_truth is not None:
            self.anomaly_truth = np.ascontiguousarray(self.anomaly_truth, dtype=np.int8)
            if self.anomaly_truth.shape != (n,):
                raise FormatError("anomaly_truth must be one flag per instance")
            fraction = float(self.anomaly_truth.mean()) if n else 0.0
            recorded = self.meta.get("anomaly_fraction")
            if recorded is None:
                self.meta["anomaly_fraction"] = fraction
            elif abs(recorded - fraction) > 1e-9:
                raise FormatError(
                    f"meta anomaly_fraction {recorded} does not match truth {fraction}"
                )
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        else:
            self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
            if self.ids.shape != (n,):
                raise FormatError("ids must be one stable index per instance")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int | None:
        return None if self.class_labels is None else self.class_labels.shape[1]

    def batch(self, indices: np.ndarray) -> Batch:
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.class_labels is None else self.class_labels[indices]
        return Batch(
            features=self.features[indices],
            class_labels=labels,
            indices=indices,
        )

    def fingerprint(self) -> str:
        """Stable content hash used to tie runs and checkpoints to their data."""
        h = hashlib.sha256()
        h.update(self.features.tobytes())
        if self.class_labels is not None:
            h.update(self.class_labels.tobytes())
        if self.anomaly_truth is not None:
            h.update(self.anomaly_truth.tobytes())
        return h.hexdigest()[:16]


@dataclass
class SyntheticSpec:
    """Parameters of a benchmark synthesis run."""

    mode: str  # "reduced_class" | "hard"
    anomaly_classes: tuple[int, ...] = ()
    keep_fraction: float = 0.1
    relabel_rng_seed: int = 0
    weak_hidden_width: int = 64
    weak_train_steps: int = 2000
    weak_learning_rate: float = 0.01
    weak_min_accuracy: float = 0.6

    def __post_init__(self) -> None:
        if self.mode not in ("reduced_class", "hard"):
            raise SynthesisError(f"unknown synthesis mode {self.mode!r}")
        if self.mode == "reduced_class" and not self.anomaly_classes:
            raise SynthesisError("reduced_class mode needs at least one anomaly class")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise SynthesisError(
                f"keep_fraction must be in (0, 1], got {self.keep_fraction}"
            )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "anomaly_classes": list(self.anomaly_classes),
            "keep_fraction": self.keep_fraction,
            "relabel_rng_seed": self.relabel_rng_seed,
            "weak_hidden_width": self.weak_hidden_width,
            "weak_train_steps": self.weak_train_steps,
            "weak_learning_rate": self.weak_learning_rate,
            "weak_min_accuracy": self.weak_min_accuracy,
        }


# ---------------------------------------------------------------------------
# ingestion


def _open_maybe_gzip(path):
    with open(path, "rb") as probe:
        magic = probe.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_be_u32(f, path: str, offset: int) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated header at byte offset {offset}")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Load a big-endian IDX image/label pair into a [0,1]-scaled dataset."""
    images_path, labels_path = str(images_path), str(labels_path)
    with _open_maybe_gzip(images_path) as f:
        magic = _read_be_u32(f, images_path, 0)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_IMAGES_MAGIC:08x})"
            )
        count = _read_be_u32(f, images_path, 4)
        rows = _read_be_u32(f, images_path, 8)
        cols = _read_be_u32(f, images_path, 12)
        expected = count * rows * cols
        raw = f.read(expected)
        if len(raw) != expected:
            raise FormatError(
                f"{images_path}: expected {expected} pixel bytes after the "
                f"header, got {len(raw)}"
            )
        pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
        features = pixels.reshape(count, rows * cols)

    with _open_maybe_gzip(labels_path) as f:
        magic = _read_be_u32(f, labels_path, 0)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: bad magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})"
            )
        label_count = _read_be_u32(f, labels_path, 4)
        if label_count != count:
            raise FormatError(
                f"label count {label_count} does not match image count {count}"
            )
        raw = f.read(label_count)
        if len(raw) != label_count:
            raise FormatError(
                f"{labels_path}: expected {label_count} label bytes, got {len(raw)}"
            )
        labels = np.frombuffer(raw, dtype=np.uint8)

    num_classes = int(labels.max()) + 1 if label_count else 0
    onehot = np.zeros((count, num_classes))
    onehot[np.arange(count), labels] = 1.0

    return Dataset(
        features=features,
        class_labels=onehot,
        meta={
            "name": Path(images_path).stem,
            "source": f"idx:{images_path}",
            "scaling": "unit_interval",
            "image_shape": [int(rows), int(cols)],
        },
    )


@dataclass
class CsvSchema:
    """How to interpret a CSV: which column is the label and what it means."""

    label_column: int | str | None = None
    label_kind: str = "truth"  # "truth" (anomaly flags) | "class"
    delimiter: str = ","
    has_header: bool = True
    categorical: tuple[int | str, ...] = ()


def _column_index(ref, header: list[str] | None, width: int, path: str) -> int:
    if isinstance(ref, int):
        if not -width <= ref < width:
            raise FormatError(f"{path}: column index {ref} out of range")
        return ref % width
    if header is None:
        raise FormatError(f"{path}: named column {ref!r} requires a header")
    if ref not in header:
        raise FormatError(f"{path}: no column named {ref!r}")
    return header.index(ref)


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Load a delimited table; numeric features are z-scored per column."""
    schema = schema or CsvSchema()
    path = str(path)
    with open(path, newline="") as f:
        reader = csv.reader(f, delimiter=schema.delimiter)
        rows = [row for row in reader if row]
    if not rows:
        raise FormatError(f"{path}: empty file")

    header = None
    if schema.has_header:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        if not rows:
            raise FormatError(f"{path}: header but no data rows")

    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f"{path}: row {i + (2 if schema.has_header else 1)} has "
                f"{len(row)} cells, expected {width}"
            )

    label_idx = None
    if schema.label_column is not None:
        label_idx = _column_index(schema.label_column, header, width, path)
    categorical_idx = {
        _column_index(ref, header, width, path) for ref in schema.categorical
    }

    feature_cols = [
        c for c in range(width) if c != label_idx and c not in categorical_idx
    ]
    numeric = np.empty((len(rows), len(feature_cols)))
    for j, c in enumerate(feature_cols):
        for i, row in enumerate(rows):
            try:
                numeric[i, j] = float(row[c])
            except ValueError:
                raise FormatError(
                    f"{path}: row {i + (2 if schema.has_header else 1)}, "
                    f"column {c}: non-numeric cell {row[c]!r} without a "
                    f"categorical declaration"
                ) from None

    onehot_blocks = []
    for c in sorted(categorical_idx):
        values = [row[c].strip() for row in rows]
        categories = sorted(set(values))
        block = np.zeros((len(rows), len(categories)))
        lookup = {v: k for k, v in enumerate(categories)}
        for i, v in enumerate(values):
            block[i, lookup[v]] = 1.0
        onehot_blocks.append(block)

    mean = numeric.mean(axis=0)
    std = numeric.std(axis=0)
    scaled = np.where(std > 0, (numeric - mean) / np.where(std > 0, std, 1.0), 0.0)
    features = np.hstack([scaled, *onehot_blocks]) if onehot_blocks else scaled

    truth = None
    class_onehot = None
    if label_idx is not None:
        raw_labels = [row[label_idx].strip() for row in rows]
        if schema.label_kind == "truth":
            try:
                flags = np.array([int(float(v)) for v in raw_labels], dtype=np.int8)
            except ValueError:
                raise FormatError(
                    f"{path}: ground-truth label column must be numeric 0/1"
                ) from None
            if not np.isin(flags, (0, 1)).all():
                raise FormatError(f"{path}: ground-truth labels must be 0 or 1")
            truth = flags
        elif schema.label_kind == "class":
            categories = sorted(set(raw_labels))
            class_onehot = np.zeros((len(rows), len(categories)))
            lookup = {v: k for k, v in enumerate(categories)}
            for i, v in enumerate(raw_labels):
                class_onehot[i, lookup[v]] = 1.0
        else:
            raise FormatError(f"unknown label_kind {schema.label_kind!r}")

    return Dataset(
        features=features,
        class_labels=class_onehot,
        anomaly_truth=truth,
        meta={
            "name": Path(path).stem,
            "source": f"csv:{path}",
            "scaling": "zscore",
        },
    )


# ---------------------------------------------------------------------------
# synthesis


def synthesize_reduced_class(
    base: Dataset, spec: SyntheticSpec, rng: np.random.Generator
) -> Dataset:
    """Subsample the chosen classes, flag survivors anomalous, scramble their labels."""
    if spec.mode != "reduced_class":
        raise SynthesisError(f"spec mode is {spec.mode!r}, not reduced_class")
    if base.class_labels is None:
        raise SynthesisError("reduced_class synthesis needs class labels")
    classes = base.class_labels.argmax(axis=1)
    class_set = set(np.unique(classes).tolist())
    anomaly_classes = set(spec.anomaly_classes)
    if not anomaly_classes <= class_set:
        raise SynthesisError(
            f"anomaly classes {sorted(anomaly_classes - class_set)} not present"
        )
    remaining = sorted(class_set - anomaly_classes)
    if not remaining:
        raise SynthesisError("at least one class must remain non-anomalous")

    keep_mask = np.ones(len(base), dtype=bool)
    anomaly_mask = np.zeros(len(base), dtype=bool)
    for c in sorted(anomaly_classes):
        members = np.flatnonzero(classes == c)
        kept_count = int(np.floor(members.size * spec.keep_fraction))
        kept = rng.choice(members, size=kept_count, replace=False)
        keep_mask[members] = False
        keep_mask[kept] = True
        anomaly_mask[kept] = True
    if not anomaly_mask.any():
        raise SynthesisError(
            "keep_fraction leaves zero anomalies; raise it or pick larger classes"
        )

    kept_idx = np.flatnonzero(keep_mask)
    features = base.features[kept_idx]
    truth = anomaly_mask[kept_idx].astype(np.int8)

    new_classes = classes[kept_idx].copy()
    relabel_rows = np.flatnonzero(truth == 1)
    draws = rng.integers(0, len(remaining), size=relabel_rows.size)
    new_classes[relabel_rows] = np.asarray(remaining)[draws]

    class_to_col = {c: i for i, c in enumerate(remaining)}
    onehot = np.zeros((kept_idx.size, len(remaining)))
    for row, c in enumerate(new_classes):
        onehot[row, class_to_col[int(c)]] = 1.0

    return Dataset(
        features=features,
        class_labels=onehot,
        anomaly_truth=truth,
        meta={
            "name": f"{base.meta.get('name', 'dataset')}-reduced",
            "source": base.meta.get("source", "unknown"),
            "scaling": base.meta.get("scaling", "none"),
            "image_shape": base.meta.get("image_shape"),
            "synthesis": spec.to_dict(),
        },
    )


def synthesize_hard(
    base: Dataset, spec: SyntheticSpec, rng: np.random.Generator
) -> Dataset:
    """Flag as anomalous everything a weak one-hidden-layer classifier gets wrong."""
    if spec.mode != "hard":
        raise SynthesisError(f"spec mode is {spec.mode!r}, not hard")
    if base.class_labels is None:
        raise SynthesisError("hard synthesis needs class labels")

    num_classes = base.class_labels.shape[1]
    stack = mlp(
        [base.dim, spec.weak_hidden_width, num_classes],
        rng,
        hidden_activation="relu",
        output_activation="softmax",
    )
    optimizer = RmsProp(learning_rate=spec.weak_learning_rate)
    n = len(base)
    batch_size = min(256, n)
    for _ in range(spec.weak_train_steps):
        idx = rng.integers(0, n, size=batch_size)
        x = base.features[idx]
        y = base.class_labels[idx]
        probs, tape = stack.forward(x)
        d_pre = (probs - y) / batch_size
        grads, _ = stack.backward(tape, d_pre, d_out_is_pre_activation=True)
        optimizer.step(stack.parameters(), grads)

    predictions = np.empty(n, dtype=np.int64)
    for start in range(0, n, 8192):
        probs, _ = stack.forward(base.features[start:start + 8192])
        predictions[start:start + 8192] = probs.argmax(axis=1)
    truth = (predictions != base.class_labels.argmax(axis=1)).astype(np.int8)
    accuracy = 1.0 - float(truth.mean())

    warnings: list[str] = []
    if accuracy < spec.weak_min_accuracy:
        warnings.append(
            f"weak classifier accuracy {accuracy:.3f} below the configured "
            f"minimum {spec.weak_min_accuracy}"
        )
    if truth.sum() == 0:
        warnings.append("weak classifier made no mistakes; dataset has zero anomalies")

    return Dataset(
        features=base.features.copy(),
        class_labels=base.class_labels.copy(),
        anomaly_truth=truth,
        meta={
            "name": f"{base.meta.get('name', 'dataset')}-hard",
            "source": base.meta.get("source", "unknown"),
            "scaling": base.meta.get("scaling", "none"),
            "image_shape": base.meta.get("image_shape"),
            "synthesis": spec.to_dict(),
            "weak_classifier_accuracy": accuracy,
            "warnings": warnings,
        },
    )


@dataclass
class DatasetStats:
    n: int
    dim: int
    num_classes: int | None
    anomaly_count: int | None
    anomaly_fraction: float | None


def dataset_stats(dataset: Dataset) -> DatasetStats:
    """Size, dimension, class count and anomaly fraction (None when unknown)."""
    truth = dataset.anomaly_truth
    return DatasetStats(
        n=len(dataset),
        dim=dataset.dim,
        num_classes=dataset.num_classes,
        anomaly_count=None if truth is None else int(truth.sum()),
        anomaly_fraction=None if truth is None else float(truth.mean()),
    )


def stratified_subsample(
    dataset: Dataset, fraction: float, rng: np.random.Generator
) -> Dataset:
    """Uniform subsample stratified by (class, anomaly flag); seed recorded by caller."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    classes = (
        dataset.class_labels.argmax(axis=1)
        if dataset.class_labels is not None
        else np.zeros(len(dataset), dtype=np.int64)
    )
    truth = (
        dataset.anomaly_truth
        if dataset.anomaly_truth is not None
        else np.zeros(len(dataset), dtype=np.int8)
    )
    keep: list[np.ndarray] = []
    for c in np.unique(classes):
        for t in (0, 1):
            members = np.flatnonzero((classes == c) & (truth == t))
            if members.size == 0:
                continue
            count = max(1, int(np.floor(members.size * fraction)))
            keep.append(rng.choice(members, size=count, replace=False))
    kept = np.sort(np.concatenate(keep))
    return Dataset(
        features=dataset.features[kept],
        class_labels=None if dataset.class_labels is None else dataset.class_labels[kept],
        anomaly_truth=None if dataset.anomaly_truth is None else dataset.anomaly_truth[kept],
        meta={
            **{k: v for k, v in dataset.meta.items() if k != "anomaly_fraction"},
            "name": f"{dataset.meta.get('name', 'dataset')}-sub{fraction}",
            "subsample_fraction": fraction,
        },
    )


# ---------------------------------------------------------------------------
# self-contained synthetic bases


def synthetic_blobs(
    num_classes: int,
    per_class: int,
    dim: int,
    seed: int,
    center_spread: float = 4.0,
    sigma: float = 0.6,
    halo_fraction: float = 0.0,
    halo_scale: float = 3.5,
) -> Dataset:
    """Balanced Gaussian class blobs: a labeled base for benchmark synthesis.

    ``halo_fraction`` puts that share of each class into a wide halo
    (``halo_scale`` times sigma): isolated, ambiguous class members of the
    kind a weak classifier gets wrong, which makes the blobs a usable base
    for misclassification-driven benchmarks.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_spread, center_spread, size=(num_classes, dim))
    features = np.empty((num_classes * per_class, dim))
    labels = np.zeros((num_classes * per_class, num_classes))
    for c in range(num_classes):
        rows = slice(c * per_class, (c + 1) * per_class)
        scale = np.full(per_class, sigma)
        if halo_fraction > 0.0:
            scale[rng.random(per_class) < halo_fraction] = sigma * halo_scale
        features[rows] = centers[c] + scale[:, None] * rng.standard_normal(
            (per_class, dim)
        )
        labels[rows, c] = 1.0
    order = rng.permutation(features.shape[0])
    return Dataset(
        features=features[order],
        class_labels=labels[order],
        meta={
            "name": f"blobs{num_classes}x{per_class}d{dim}",
            "source": f"synthetic:blobs(seed={seed})",
            "scaling": "none",
            "generator_seed": seed,
        },
    )


def two_regime_mixture(
    seed: int,
    n_normal: int = 6000,
    n_clustered: int = 100,
    n_sparse: int = 6,
    blend_fraction: float = 0.7,
) -> Dataset:
    """2-D mixture with both anomaly regimes: a dense cluster and sparse points.

    Three Gaussian class blobs form the normal data, two of them close
    enough that their shared boundary produces ordinary hard-to-classify
    normals. The clustered anomalies are a tight group past blob 0's
    shoulder: most (``blend_fraction``) carry blob 0's own class label, so
    neither a reconstruction score (the group is dense) nor a
    label-prediction score (the labels mostly look locally consistent, and
    the boundary normals out-score them) exposes the group — only expert
    feedback does. The remainder are labeled among the other classes. A fan
    of detached group members trails into empty space, the way a coherent
    anomaly group in real data carries a few conspicuous members. The
    sparse anomalies are isolated points on the far outskirts with random
    labels. Features are z-scored.
    """
    rng = np.random.default_rng(seed)
    centers = np.array([[-3.0, 0.0], [-1.2, 0.2], [0.5, 3.5]])
    sigmas = (0.55, 0.6, 0.5)
    per = n_normal // 3
    counts = [per, per, n_normal - 2 * per]

    chunks = []
    classes = []
    truth = []
    for c, (center, sigma, count) in enumerate(zip(centers, sigmas, counts)):
        chunks.append(center + sigma * rng.standard_normal((count, 2)))
        classes.append(np.full(count, c))
        truth.append(np.zeros(count, dtype=np.int8))

    def blended_labels(count: int) -> np.ndarray:
        labels = np.zeros(count, dtype=np.int64)
        scrambled = rng.random(count) >= blend_fraction
        labels[scrambled] = rng.integers(1, 3, size=int(scrambled.sum()))
        return labels

    # Dense anomaly group past blob 0's shoulder; labels mostly blend in.
    cluster_center = centers[0] + np.array([0.3, 1.7])
    n_stragglers = min(8, max(0, n_clustered - 4))
    n_core = n_clustered - n_stragglers
    chunks.append(cluster_center + 0.16 * rng.standard_normal((n_core, 2)))
    classes.append(blended_labels(n_core))
    truth.append(np.ones(n_core, dtype=np.int8))

    if n_stragglers:
        # the group's conspicuous members: staggered depths into empty space
        ray = np.array([0.25, 0.97])
        ray = ray / np.linalg.norm(ray)
        depths = np.linspace(1.0, 2.75, n_stragglers)
        turns = np.deg2rad(
            np.array([-25, 20, -10, 30, 0, -30, 15, -15])[:n_stragglers]
        )
        directions = np.stack(
            [
                ray[0] * np.cos(turns) - ray[1] * np.sin(turns),
                ray[0] * np.sin(turns) + ray[1] * np.cos(turns),
            ],
            axis=1,
        )
        stragglers = cluster_center + depths[:, None] * directions
        chunks.append(stragglers + 0.06 * rng.standard_normal((n_stragglers, 2)))
        classes.append(blended_labels(n_stragglers))
        truth.append(np.ones(n_stragglers, dtype=np.int8))

    # Sparse anomalies: an isolated ring far outside every blob.
    midpoint = centers.mean(axis=0)
    angles = np.linspace(0.0, 2 * np.pi, n_sparse, endpoint=False) + 0.4
    radii = np.tile([3.8, 4.6, 5.4], n_sparse // 3 + 1)[:n_sparse]
    sparse = midpoint + np.stack(
        [radii * np.cos(angles), radii * np.sin(angles)], axis=1
    )
    chunks.append(sparse + 0.15 * rng.standard_normal((n_sparse, 2)))
    classes.append(rng.integers(0, 3, size=n_sparse))
    truth.append(np.ones(n_sparse, dtype=np.int8))

    features = np.vstack(chunks)
    class_ids = np.concatenate(classes)
    truth_arr = np.concatenate(truth)
    order = rng.permutation(features.shape[0])
    features, class_ids, truth_arr = features[order], class_ids[order], truth_arr[order]

    features = (features - features.mean(axis=0)) / features.std(axis=0)
    onehot = np.zeros((features.shape[0], 3))
    onehot[np.arange(features.shape[0]), class_ids] = 1.0

    return Dataset(
        features=features,
        class_labels=onehot,
        anomaly_truth=truth_arr,
        meta={
            "name": "two-regime-2d",
            "source": f"synthetic:two_regime(seed={seed})",
            "scaling": "zscore",
            "generator_seed": seed,
        },
    )


def nested_group_field(
    num_classes: int,
    per_class: int,
    dim: int,
    seed: int,
    sigma: float = 0.8,
    center_spread: float = 3.5,
    core_scale: float = 0.3,
    core_fraction: float = 0.12,
    n_nested: int | None = None,
    fan_size: int = 8,
) -> Dataset:
    """Class blobs where some classes hide a sub-population inside another.

    Each of the first ``n_nested`` classes (default: half) plants a tight
    core of its own members just off the center of a different class's
    blob, plus a small fan of conspicuous members trailing out of that blob
    into open space. A capacity-limited classifier trained on this base
    labels the nested territory by its host and misclassifies the cores
    wholesale, which makes the weak-classifier benchmark synthesis produce
    structured, group-shaped anomalies instead of scattered boundary noise.
    """
    rng = np.random.default_rng(seed)
    if n_nested is None:
        n_nested = num_classes // 2
    centers = rng.uniform(-center_spread, center_spread, size=(num_classes, dim))
    features = []
    labels = []
    for c in range(num_classes):
        if c < n_nested:
            n_core = int(per_class * core_fraction)
            host = (c + num_classes // 2) % num_classes
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            core_center = centers[host] + 0.4 * sigma * direction
            n_tight = max(n_core - fan_size, 0)
            core = core_center + core_scale * sigma * rng.standard_normal((n_tight, dim))
            out_dir = core_center - centers[host]
            out_dir = out_dir / np.linalg.norm(out_dir)
            depths = np.linspace(2.5, 5.0, fan_size) * sigma
            fan = core_center + depths[:, None] * out_dir
            fan = fan + 0.15 * sigma * rng.standard_normal((fan_size, dim))
            block = np.vstack([core, fan])
        else:
            block = np.empty((0, dim))
        major = centers[c] + sigma * rng.standard_normal(
            (per_class - block.shape[0], dim)
        )
        features.append(np.vstack([major, block]))
        onehot = np.zeros((per_class, num_classes))
        onehot[:, c] = 1.0
        labels.append(onehot)
    f = np.vstack(features)
    y = np.vstack(labels)
    order = rng.permutation(f.shape[0])
    f, y = f[order], y[order]
    f = (f - f.mean(axis=0)) / f.std(axis=0)
    return Dataset(
        features=f,
        class_labels=y,
        meta={
            "name": f"nested{num_classes}x{per_class}d{dim}",
            "source": f"synthetic:nested_group_field(seed={seed})",
            "scaling": "zscore",
            "generator_seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# persistence


def save_dataset(dataset: Dataset, path) -> None:
    """Write the self-describing container: arrays plus JSON metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "features": dataset.features,
        "ids": dataset.ids,
        "meta_json": np.frombuffer(
            json.dumps(
                {"schema_version": CONTAINER_SCHEMA_VERSION, **dataset.meta}
            ).encode(),
            dtype=np.uint8,
        ),
    }
    if dataset.class_labels is not None:
        arrays["class_labels"] = dataset.class_labels
    if dataset.anomaly_truth is not None:
        arrays["anomaly_truth"] = dataset.anomaly_truth
    np.savez_compressed(path, **arrays)


def load_dataset(path) -> Dataset:
    """Read a container written by save_dataset."""
    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["meta_json"]).decode())
        version = meta.pop("schema_version", None)
        if version != CONTAINER_SCHEMA_VERSION:
            raise FormatError(
                f"container schema {version!r} is not supported "
                f"(expected {CONTAINER_SCHEMA_VERSION})"
            )
        return Dataset(
            features=bundle["features"],
            class_labels=bundle["class_labels"] if "class_labels" in bundle else None,
            anomaly_truth=bundle["anomaly_truth"] if "anomaly_truth" in bundle else None,
            ids=bundle["ids"],
            meta=meta,
        )


def open_dataset(path) -> Dataset:
    """Load a dataset by file type: .npz container or .csv table."""
    path = Path(path)
    if path.suffix == ".npz":
        return load_dataset(path)
    if path.suffix == ".csv":
        return load_csv(path)
    raise FormatError(f"cannot infer dataset format from {path.name!r}")
