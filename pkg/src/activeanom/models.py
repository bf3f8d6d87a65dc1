"""Anomaly models: denoising autoencoder, label-prediction net, feedback head.

Two unsupervised base detectors are provided. Each maps an instance to a
latent code and a nonnegative anomaly score:

* ``DaeModel`` — denoising autoencoder. The encoder sees a Gaussian-corrupted
  input; the score is the squared L2 reconstruction error against the clean
  input.
* ``ClassifierNet`` — predicts an instance's class label from its features;
  the score is the cross-entropy of that prediction, so instances whose
  labels the net cannot explain score high.

A ``FeedbackHead`` turns either base into an actively trainable detector: a
logistic unit over the concatenation [latent; score] produces an anomaly
probability, trained with binary cross-entropy on whatever instances an
expert has audited so far. Gradients from the head flow back into the
latent (reshaping the encoder/trunk around the audited labels) but are cut
exactly at the score input, which may come from a non-differentiable
computation. Consequently decoder and softmax-output parameters only ever
receive gradients from the base loss.

The joint training objective is ``base loss (batch mean) + head loss (mean
over the labeled subset of the batch)``; with nothing labeled it reduces to
the base loss exactly, so a composite with an empty label store trains
bit-identically to its base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import kernels
from .nn.layers import DenseLayer, LayerStack, ShapeError, glorot_uniform, mlp
from .nn.losses import binary_cross_entropy_with_logits
from .nn.optim import RmsProp, TrainingDiverged

MODEL_KINDS = ("dae", "classnet", "dae_uai", "classnet_uai")

SCORE_CEIL = 1.0 - 1e-12
SCORE_FLOOR = 1e-12


class UsageError(RuntimeError):
    """The operation was called in a way the model cannot satisfy."""


@dataclass
class Scores:
    """Per-instance scores from one scoring pass (clean inputs, no noise)."""

    base: np.ndarray
    head: np.ndarray | None
    latent: np.ndarray


class DaeModel:
    """Denoising autoencoder with independent encoder/decoder weights."""

    def __init__(self, encoder: LayerStack, decoder: LayerStack, noise_phi: float):
        if encoder.out_dim != decoder.in_dim:
            raise ShapeError(
                f"decoder in_dim {decoder.in_dim} does not match "
                f"latent width {encoder.out_dim}"
            )
        if noise_phi < 0:
            raise ValueError("noise_phi must be >= 0")
        self.encoder = encoder
        self.decoder = decoder
        self.noise_phi = noise_phi

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.decoder.parameters()


class ClassifierNet:
    """Feature-to-class-label predictor scored by prediction cross-entropy."""

    def __init__(self, trunk: LayerStack, output: DenseLayer):
        if output.activation != "softmax":
            raise ValueError("output layer must be softmax")
        if output.in_dim != trunk.out_dim:
            raise ShapeError(
                f"output in_dim {output.in_dim} does not match "
                f"trunk width {trunk.out_dim}"
            )
        self.trunk = trunk
        self.output_stack = LayerStack([output])

    @property
    def input_dim(self) -> int:
        return self.trunk.in_dim

    @property
    def latent_dim(self) -> int:
        return self.trunk.out_dim

    @property
    def num_classes(self) -> int:
        return self.output_stack.out_dim

    def parameters(self) -> list[np.ndarray]:
        return self.trunk.parameters() + self.output_stack.parameters()


class FeedbackHead:
    """Logistic unit over [latent; base score] -> anomaly probability.

    The score column is registered as stop-gradient: its input gradient is
    exactly zero, always. Weights start at zero so an untrained head emits
    a constant 0.5 and imposes no ranking of its own.
    """

    def __init__(self, latent_dim: int):
        layer = DenseLayer(
            weights=np.zeros((1, latent_dim + 1)),
            bias=np.zeros(1),
            activation="linear",
        )
        self.stack = LayerStack([layer])
        self.latent_dim = latent_dim
        stop = np.ones(latent_dim + 1)
        stop[latent_dim] = 0.0
        self._stop_mask = stop

    @property
    def weight(self) -> np.ndarray:
        return self.stack.layers[0].weights[0]

    @property
    def bias(self) -> float:
        return float(self.stack.layers[0].bias[0])

    def parameters(self) -> list[np.ndarray]:
        return self.stack.parameters()

    def logits(self, latent: np.ndarray, score: np.ndarray):
        """Forward on a batch; returns (logits (n,), tape)."""
        joined = np.concatenate([latent, score[:, None]], axis=1)
        out, tape = self.stack.forward(joined, input_stop_mask=self._stop_mask)
        return out[:, 0], tape

    def probability(self, latent: np.ndarray, score: np.ndarray) -> np.ndarray:
        """Anomaly probabilities in the open interval (0, 1)."""
        z, _ = self.logits(latent, score)
        p = kernels.sigmoid(z.reshape(-1, 1))[:, 0]
        return np.clip(p, SCORE_FLOOR, SCORE_CEIL)


def head_score(head: FeedbackHead, latent: np.ndarray, score: float) -> float:
    """Single-instance head probability (see FeedbackHead.probability)."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 1 or latent.shape[0] != head.latent_dim:
        raise ShapeError(
            f"latent must have length {head.latent_dim}, got shape {latent.shape}"
        )
    return float(head.probability(latent[None, :], np.array([float(score)]))[0])


class CompositeModel:
    """A base detector plus (for the *_uai kinds) a feedback head."""

    def __init__(self, kind: str, base, head: FeedbackHead | None):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        if kind.endswith("_uai") and head is None:
            raise ValueError(f"kind {kind} requires a head")
        if not kind.endswith("_uai") and head is not None:
            raise ValueError(f"kind {kind} must not carry a head")
        self.kind = kind
        self.base = base
        self.head = head

    @property
    def needs_class_labels(self) -> bool:
        return isinstance(self.base, ClassifierNet)

    @property
    def is_denoising(self) -> bool:
        return isinstance(self.base, DaeModel)

    def parameters(self) -> list[np.ndarray]:
        params = self.base.parameters()
        if self.head is not None:
            params = params + self.head.parameters()
        return params

    # -- training ----------------------------------------------------------

    def forward_backward(
        self,
        x: np.ndarray,
        class_onehot: np.ndarray | None,
        labeled_mask: np.ndarray,
        labeled_targets: np.ndarray,
        noise: np.ndarray | None = None,
        head_score_override: np.ndarray | None = None,
    ) -> tuple[float, list[np.ndarray]]:
        """One joint loss evaluation with gradients for every parameter.

        ``labeled_mask`` flags the batch rows that have audited labels;
        ``labeled_targets`` holds those labels in row order. ``noise`` is the
        additive input corruption (already scaled), or None for a clean pass.
        Gradients align with parameters().

        ``head_score_override`` replaces the score column the head consumes.
        The head's score input is stop-gradient, i.e. the loss is defined
        with that input held constant; a finite-difference oracle must
        therefore evaluate the perturbed loss with the score frozen at its
        base-point value, which this hook enables. Training never sets it.
        """
        if self.is_denoising:
            return self._forward_backward_dae(
                x, labeled_mask, labeled_targets, noise, head_score_override
            )
        return self._forward_backward_classnet(
            x, class_onehot, labeled_mask, labeled_targets, head_score_override
        )

    def _head_terms(self, latent, score, labeled_mask, labeled_targets):
        """Head loss, head grads, and the labeled-row latent gradient."""
        w_layer = self.head.stack.layers[0]
        if not labeled_mask.any():
            zero_grads = [np.zeros_like(w_layer.weights), np.zeros_like(w_layer.bias)]
            return 0.0, zero_grads, None
        m = int(labeled_mask.sum())
        y = np.asarray(labeled_targets, dtype=np.float64)
        if y.shape[0] != m:
            raise ShapeError("labeled_targets must match the labeled row count")
        z, tape = self.head.logits(latent[labeled_mask], score[labeled_mask])
        loss = float(binary_cross_entropy_with_logits(z, y).mean())
        p = kernels.sigmoid(z.reshape(-1, 1))[:, 0]
        d_logit = ((p - y) / m)[:, None]
        head_grads, d_joined = self.head.stack.backward(
            tape, d_logit, d_out_is_pre_activation=True
        )
        d_latent_labeled = d_joined[:, : self.head.latent_dim]
        return loss, head_grads, d_latent_labeled

    def _forward_backward_dae(
        self, x, labeled_mask, labeled_targets, noise, head_score_override=None
    ):
        dae: DaeModel = self.base
        x = np.ascontiguousarray(x, dtype=np.float64)
        corrupted = x if noise is None else x + noise
        latent, tape_enc = dae.encoder.forward(corrupted)
        recon, tape_dec = dae.decoder.forward(latent)
        score = kernels.row_squared_error(x, recon)
        n = x.shape[0]
        loss_base = float(score.mean())

        head_loss, head_grads, d_latent_labeled = 0.0, [], None
        if self.head is not None:
            head_in = score if head_score_override is None else head_score_override
            head_loss, head_grads, d_latent_labeled = self._head_terms(
                latent, head_in, labeled_mask, labeled_targets
            )

        d_recon = (2.0 / n) * (recon - x)
        dec_grads, d_latent = dae.decoder.backward(tape_dec, d_recon)
        if d_latent_labeled is not None:
            d_latent = d_latent.copy()
            d_latent[labeled_mask] += d_latent_labeled
        enc_grads, _ = dae.encoder.backward(tape_enc, d_latent)

        return loss_base + head_loss, enc_grads + dec_grads + head_grads

    def _forward_backward_classnet(
        self, x, class_onehot, labeled_mask, labeled_targets, head_score_override=None
    ):
        net: ClassifierNet = self.base
        if class_onehot is None:
            raise UsageError("this model scores label predictions; the batch has no class labels")
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.ascontiguousarray(class_onehot, dtype=np.float64)
        latent, tape_trunk = net.trunk.forward(x)
        probs, tape_out = net.output_stack.forward(latent)
        score = kernels.row_cross_entropy(y, probs)
        n = x.shape[0]
        loss_base = float(score.mean())

        head_loss, head_grads, d_latent_labeled = 0.0, [], None
        if self.head is not None:
            head_in = score if head_score_override is None else head_score_override
            head_loss, head_grads, d_latent_labeled = self._head_terms(
                latent, head_in, labeled_mask, labeled_targets
            )

        d_pre_out = (probs - y) / n
        out_grads, d_latent = net.output_stack.backward(
            tape_out, d_pre_out, d_out_is_pre_activation=True
        )
        if d_latent_labeled is not None:
            d_latent = d_latent.copy()
            d_latent[labeled_mask] += d_latent_labeled
        trunk_grads, _ = net.trunk.backward(tape_trunk, d_latent)

        return loss_base + head_loss, trunk_grads + out_grads + head_grads

    def train_step(
        self,
        x: np.ndarray,
        class_onehot: np.ndarray | None,
        labeled_mask: np.ndarray,
        labeled_targets: np.ndarray,
        optimizer: RmsProp,
        rng: np.random.Generator | None = None,
    ) -> float:
        """Forward, backward and one RMSprop update of all parameters."""
        if x.shape[0] == 0:
            raise UsageError("training batch must be nonempty")
        noise = None
        if self.is_denoising and self.base.noise_phi > 0.0:
            if rng is None:
                raise UsageError("denoising training needs an rng for the corruption")
            noise = self.base.noise_phi * rng.standard_normal(x.shape)
        loss, grads = self.forward_backward(
            x, class_onehot, labeled_mask, labeled_targets, noise
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss {loss!r} (kind={self.kind}, batch={x.shape})"
            )
        optimizer.step(self.parameters(), grads)
        return loss

    def training_score(
        self,
        x: np.ndarray,
        class_onehot: np.ndarray | None,
        noise: np.ndarray | None = None,
    ) -> np.ndarray:
        """The per-instance base score a training pass would feed the head."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if self.is_denoising:
            corrupted = x if noise is None else x + noise
            latent, _ = self.base.encoder.forward(corrupted)
            recon, _ = self.base.decoder.forward(latent)
            return kernels.row_squared_error(x, recon)
        if class_onehot is None:
            raise UsageError(
                "this model scores label predictions; the batch has no class labels"
            )
        y = np.ascontiguousarray(class_onehot, dtype=np.float64)
        latent, _ = self.base.trunk.forward(x)
        probs, _ = self.base.output_stack.forward(latent)
        return kernels.row_cross_entropy(y, probs)

    # -- scoring -----------------------------------------------------------

    def score_batch(self, x: np.ndarray, class_onehot: np.ndarray | None) -> Scores:
        """Deterministic clean-input scores: no corruption is applied."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if self.is_denoising:
            latent, _ = self.base.encoder.forward(x)
            recon, _ = self.base.decoder.forward(latent)
            base = kernels.row_squared_error(x, recon)
        else:
            if class_onehot is None:
                raise UsageError(
                    "this model scores label predictions; the batch has no class labels"
                )
            y = np.ascontiguousarray(class_onehot, dtype=np.float64)
            latent, _ = self.base.trunk.forward(x)
            probs, _ = self.base.output_stack.forward(latent)
            base = kernels.row_cross_entropy(y, probs)
        head = None
        if self.head is not None:
            head = self.head.probability(latent, base)
        return Scores(base=base, head=head, latent=latent)

    def score_all(
        self,
        features: np.ndarray,
        class_onehot: np.ndarray | None,
        chunk: int = 8192,
    ) -> Scores:
        """Score a whole dataset in chunks (memory-bounded, same results)."""
        parts = []
        for start in range(0, features.shape[0], chunk):
            stop = start + chunk
            y = None if class_onehot is None else class_onehot[start:stop]
            parts.append(self.score_batch(features[start:stop], y))
        base = np.concatenate([p.base for p in parts])
        latent = np.concatenate([p.latent for p in parts])
        head = None
        if self.head is not None:
            head = np.concatenate([p.head for p in parts])
        return Scores(base=base, head=head, latent=latent)


def full_loss(model: CompositeModel, batch, label_store, noise=None) -> float:
    """Joint loss of a batch against the labels audited so far.

    ``batch`` carries features, optional class labels and dataset indices;
    ``label_store`` answers ``labels_for(indices)`` with a (mask, targets)
    pair. With nothing labeled this equals the base loss exactly.
    """
    labeled_mask, labeled_targets = label_store.labels_for(batch.indices)
    loss, _ = model.forward_backward(
        batch.features, batch.class_labels, labeled_mask, labeled_targets, noise
    )
    return loss


def build_model(
    kind: str,
    input_dim: int,
    hidden_sizes: tuple[int, ...],
    rng: np.random.Generator,
    num_classes: int | None = None,
    noise_phi: float = 0.1,
    decoder_output: str = "linear",
) -> CompositeModel:
    """Construct a model of the given kind with seeded initialization.

    The draw order is fixed (encoder then decoder, trunk then output) and
    the head starts at zero without consuming randomness, so a base model
    and its *_uai variant initialize their shared parameters identically
    from the same generator state.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if len(hidden_sizes) < 1:
        raise ValueError("hidden_sizes must name at least the latent width")
    latent_dim = hidden_sizes[-1]
    if kind.startswith("dae"):
        encoder = mlp([input_dim, *hidden_sizes], rng,
                      hidden_activation="relu", output_activation="relu")
        decoder = mlp([latent_dim, *hidden_sizes[-2::-1], input_dim], rng,
                      hidden_activation="relu", output_activation=decoder_output)
        base = DaeModel(encoder, decoder, noise_phi)
    else:
        if num_classes is None or num_classes < 2:
            raise UsageError("a label-prediction model needs num_classes >= 2")
        trunk = mlp([input_dim, *hidden_sizes], rng,
                    hidden_activation="relu", output_activation="relu")
        output = DenseLayer(
            weights=glorot_uniform(num_classes, latent_dim, rng),
            bias=np.zeros(num_classes),
            activation="softmax",
        )
        base = ClassifierNet(trunk, output)
    head = FeedbackHead(latent_dim) if kind.endswith("_uai") else None
    return CompositeModel(kind, base, head)
