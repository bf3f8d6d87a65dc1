"""Versioned checkpoint containers that round-trip bit-exactly.

A checkpoint is a single ``.npz`` holding every parameter and optimizer
accumulator as float64 arrays plus one JSON metadata blob (schema version,
model structure, RNG state, label store, round log, loop position). Writes
go through a temp file and an atomic replace so a crash never leaves a
half-written checkpoint behind. A schema version mismatch raises instead
of reinterpreting silently.
"""

from __future__ import annotations

import json
import os
import warnings
from pathlib import Path

import numpy as np

from .models import (
    ClassifierNet,
    CompositeModel,
    DaeModel,
    FeedbackHead,
)
from .nn import kernels
from .nn.layers import DenseLayer, LayerStack

CHECKPOINT_SCHEMA_VERSION = 1


class MigrationError(RuntimeError):
    """The checkpoint was written by an incompatible schema version."""


def _stack_spec(stack: LayerStack) -> list[dict]:
    return [
        {"in": layer.in_dim, "out": layer.out_dim, "activation": layer.activation}
        for layer in stack.layers
    ]


def _rebuild_stack(spec: list[dict]) -> LayerStack:
    return LayerStack(
        [
            DenseLayer(
                weights=np.zeros((entry["out"], entry["in"])),
                bias=np.zeros(entry["out"]),
                activation=entry["activation"],
            )
            for entry in spec
        ]
    )


def model_spec(model: CompositeModel) -> dict:
    if isinstance(model.base, DaeModel):
        stacks = {
            "encoder": _stack_spec(model.base.encoder),
            "decoder": _stack_spec(model.base.decoder),
        }
        extra = {"noise_phi": model.base.noise_phi}
    else:
        stacks = {
            "trunk": _stack_spec(model.base.trunk),
            "output": _stack_spec(model.base.output_stack),
        }
        extra = {}
    return {
        "kind": model.kind,
        "stacks": stacks,
        "head_latent_dim": None if model.head is None else model.head.latent_dim,
        **extra,
    }


def rebuild_model(spec: dict) -> CompositeModel:
    kind = spec["kind"]
    if "encoder" in spec["stacks"]:
        base = DaeModel(
            encoder=_rebuild_stack(spec["stacks"]["encoder"]),
            decoder=_rebuild_stack(spec["stacks"]["decoder"]),
            noise_phi=spec["noise_phi"],
        )
    else:
        trunk = _rebuild_stack(spec["stacks"]["trunk"])
        output_stack = _rebuild_stack(spec["stacks"]["output"])
        base = ClassifierNet(trunk, output_stack.layers[0])
    head = None
    if spec["head_latent_dim"] is not None:
        head = FeedbackHead(spec["head_latent_dim"])
    return CompositeModel(kind, base, head)


def _atomic_savez(path: Path, arrays: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)


def _pack(meta: dict, param_arrays: list[np.ndarray], accum_arrays: list[np.ndarray]) -> dict:
    arrays = {
        "meta_json": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    }
    for i, arr in enumerate(param_arrays):
        arrays[f"param_{i:04d}"] = arr
    for i, arr in enumerate(accum_arrays):
        arrays[f"accum_{i:04d}"] = arr
    return arrays


def read_checkpoint_meta(path) -> dict:
    """Read only the JSON metadata of a checkpoint (arrays stay on disk)."""
    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["meta_json"]).decode())
    if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise MigrationError(
            f"checkpoint schema {meta.get('schema_version')!r} is not "
            f"supported (expected {CHECKPOINT_SCHEMA_VERSION})"
        )
    return meta


def _unpack(path) -> tuple[dict, list[np.ndarray], list[np.ndarray]]:
    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["meta_json"]).decode())
        params = [
            bundle[name] for name in sorted(n for n in bundle.files if n.startswith("param_"))
        ]
        accums = [
            bundle[name] for name in sorted(n for n in bundle.files if n.startswith("accum_"))
        ]
    if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise MigrationError(
            f"checkpoint schema {meta.get('schema_version')!r} is not "
            f"supported (expected {CHECKPOINT_SCHEMA_VERSION})"
        )
    return meta, params, accums


def _load_params_into(model: CompositeModel, arrays: list[np.ndarray]) -> None:
    params = model.parameters()
    if len(params) != len(arrays):
        raise MigrationError(
            f"checkpoint holds {len(arrays)} parameter arrays, model has {len(params)}"
        )
    for target, source in zip(params, arrays):
        if target.shape != source.shape:
            raise MigrationError(
                f"parameter shape {source.shape} does not match model {target.shape}"
            )
        target[...] = source


# ---------------------------------------------------------------------------
# model-only checkpoints


def save_model_checkpoint(path, model: CompositeModel, optimizer=None, rng=None) -> None:
    meta = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "payload": "model",
        "backend": kernels.BACKEND,
        "model_spec": model_spec(model),
        "rng_state": None if rng is None else rng.bit_generator.state,
        "optimizer": None
        if optimizer is None
        else {
            "learning_rate": optimizer.learning_rate,
            "decay": optimizer.decay,
            "epsilon": optimizer.epsilon,
        },
    }
    accums = optimizer.state_arrays() if optimizer is not None else []
    _atomic_savez(Path(path), _pack(meta, model.parameters(), accums))


def load_model_checkpoint(path) -> dict:
    """Returns {model, optimizer, rng} (the latter two None when not saved)."""
    from .nn.optim import RmsProp

    meta, params, accums = _unpack(path)
    model = rebuild_model(meta["model_spec"])
    _load_params_into(model, params)
    optimizer = None
    if meta["optimizer"] is not None:
        optimizer = RmsProp(**meta["optimizer"])
        if accums:
            optimizer.load_state_arrays(accums)
    rng = None
    if meta["rng_state"] is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = meta["rng_state"]
    return {"model": model, "optimizer": optimizer, "rng": rng}


# ---------------------------------------------------------------------------
# full-run checkpoints


def save_run_checkpoint(path, run) -> None:
    meta = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "payload": "run",
        "backend": kernels.BACKEND,
        "config": run.config.to_dict(),
        "dataset_fingerprint": run.dataset.fingerprint(),
        "model_spec": model_spec(run.model),
        "rng_state": run.rng.bit_generator.state,
        "phase": run.phase,
        "spent": run.spent,
        "store": run.store.to_dict(),
        "rounds": [r.to_dict() for r in run.rounds],
        "pending": None if run.pending is None else run.pending.to_dict(),
    }
    _atomic_savez(Path(path), _pack(meta, run.model.parameters(), run.optimizer.state_arrays()))


def load_run_checkpoint(path, dataset):
    """Restore an ActiveRun against the same dataset it was checkpointed with."""
    from .loop import ActiveRun, AuditRound, LabelStore, PendingSelection, RunConfig

    meta, params, accums = _unpack(path)
    if meta["payload"] != "run":
        raise MigrationError("not a run checkpoint")
    fingerprint = dataset.fingerprint()
    if meta["dataset_fingerprint"] != fingerprint:
        raise MigrationError(
            f"checkpoint was written for dataset {meta['dataset_fingerprint']}, "
            f"got {fingerprint}"
        )
    if meta["backend"] != kernels.BACKEND:
        warnings.warn(
            f"checkpoint was written under the {meta['backend']} kernel backend "
            f"but {kernels.BACKEND} is active; results may differ in the last bits",
            stacklevel=2,
        )
    config = RunConfig.from_dict(meta["config"])
    run = ActiveRun(dataset, config)
    _load_params_into(run.model, params)
    if accums:
        run.optimizer.load_state_arrays(accums)
    run.rng.bit_generator.state = meta["rng_state"]
    run.phase = meta["phase"]
    run.spent = meta["spent"]
    run.store = LabelStore.from_dict(meta["store"])
    run.rounds = [AuditRound.from_dict(r) for r in meta["rounds"]]
    run.pending = (
        None if meta["pending"] is None else PendingSelection.from_dict(meta["pending"])
    )
    return run
