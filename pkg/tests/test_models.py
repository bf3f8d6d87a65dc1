"""Tests for the anomaly models, the feedback head, and the joint loss."""

import numpy as np
import pytest

from activeanom.checkpoint import (
    MigrationError,
    load_model_checkpoint,
    save_model_checkpoint,
)
from activeanom.models import (
    CompositeModel,
    DaeModel,
    FeedbackHead,
    UsageError,
    build_model,
    full_loss,
    head_score,
)
from activeanom.nn import DenseLayer, LayerStack, RmsProp, cross_entropy, squared_error

from fdcheck import check_gradients, kink_margin, randomize_biases


def _identity_dae(phi=0.0):
    encoder = LayerStack([DenseLayer(np.array([[1.0]]), np.zeros(1), "linear")])
    decoder = LayerStack([DenseLayer(np.array([[1.0]]), np.zeros(1), "linear")])
    return CompositeModel("dae", DaeModel(encoder, decoder, phi), None)


class _StoreStub:
    """Minimal label store: a dict of index -> label."""

    def __init__(self, labels=None):
        self.labels = labels or {}

    def labels_for(self, indices):
        mask = np.array([int(i) in self.labels for i in indices])
        targets = np.array(
            [self.labels[int(i)] for i in indices[mask]], dtype=np.float64
        )
        return mask, targets


class _BatchStub:
    def __init__(self, features, class_labels=None):
        self.features = features
        self.class_labels = class_labels
        self.indices = np.arange(features.shape[0])


class TestDaeForward:
    def test_identity_network_reconstructs_exactly(self):
        model = _identity_dae(phi=0.0)
        scores = model.score_batch(np.array([[0.5]]), None)
        assert scores.base[0] == 0.0
        assert scores.latent[0, 0] == 0.5

    def test_scoring_is_deterministic(self):
        rng = np.random.default_rng(0)
        model = build_model("dae", 4, (6, 3), rng, noise_phi=0.5)
        x = rng.standard_normal((5, 4))
        a = model.score_batch(x, None)
        b = model.score_batch(x, None)
        assert np.array_equal(a.base, b.base)

    def test_score_equals_independent_reconstruction_error(self):
        rng = np.random.default_rng(1)
        model = build_model("dae", 4, (6, 3), rng)
        x = rng.standard_normal((3, 4))
        scores = model.score_batch(x, None)
        latent, _ = model.base.encoder.forward(x)
        recon, _ = model.base.decoder.forward(latent)
        for i in range(3):
            np.testing.assert_allclose(
                scores.base[i], squared_error(x[i], recon[i]), rtol=1e-12
            )


class TestClassnetForward:
    def test_uniform_prediction_scores_log_num_classes(self):
        rng = np.random.default_rng(2)
        model = build_model("classnet", 4, (6, 3), rng, num_classes=10)
        # zero the output layer so the softmax is exactly uniform
        out = model.base.output_stack.layers[0]
        out.weights[:] = 0.0
        out.bias[:] = 0.0
        x = rng.standard_normal((4, 4))
        y = np.zeros((4, 10))
        y[np.arange(4), [0, 3, 7, 9]] = 1.0
        scores = model.score_batch(x, y)
        np.testing.assert_allclose(scores.base, np.log(10.0), rtol=1e-12)

    def test_exact_prediction_scores_zero(self):
        rng = np.random.default_rng(3)
        model = build_model("classnet", 2, (4, 2), rng, num_classes=3)
        out = model.base.output_stack.layers[0]
        out.weights[:] = 0.0
        out.bias[:] = np.array([200.0, 0.0, 0.0])  # softmax rounds to exactly one-hot
        x = np.ones((2, 2))
        y = np.zeros((2, 3))
        y[:, 0] = 1.0
        scores = model.score_batch(x, y)
        np.testing.assert_array_equal(scores.base, np.zeros(2))

    def test_score_equals_independent_cross_entropy(self):
        rng = np.random.default_rng(4)
        model = build_model("classnet", 5, (6, 3), rng, num_classes=3)
        x = rng.standard_normal((4, 5))
        y = np.zeros((4, 3))
        y[np.arange(4), rng.integers(0, 3, 4)] = 1.0
        scores = model.score_batch(x, y)
        latent, _ = model.base.trunk.forward(x)
        probs, _ = model.base.output_stack.forward(latent)
        for i in range(4):
            np.testing.assert_allclose(
                scores.base[i], cross_entropy(y[i], probs[i]), rtol=1e-12
            )

    def test_missing_class_labels_is_usage_error(self):
        rng = np.random.default_rng(5)
        model = build_model("classnet", 4, (6, 3), rng, num_classes=3)
        with pytest.raises(UsageError):
            model.score_batch(rng.standard_normal((2, 4)), None)


class TestHead:
    def test_zero_head_outputs_half(self):
        head = FeedbackHead(3)
        assert head_score(head, np.array([1.0, -2.0, 0.5]), 42.0) == 0.5

    def test_closed_form_sigmoid(self):
        head = FeedbackHead(1)
        head.stack.layers[0].weights[:] = np.array([[1.0, 2.0]])
        value = head_score(head, np.array([0.5]), 0.25)
        np.testing.assert_allclose(value, 1.0 / (1.0 + np.exp(-1.0)), rtol=1e-12)
        np.testing.assert_allclose(value, 0.731059, atol=1e-6)

    def test_dead_score_input(self):
        head = FeedbackHead(2)
        head.stack.layers[0].weights[:] = np.array([[0.3, -0.7, 0.0]])
        latent = np.array([0.2, 0.9])
        assert head_score(head, latent, 1.0) == head_score(head, latent, 1e6)

    def test_output_is_strictly_inside_unit_interval(self):
        head = FeedbackHead(1)
        head.stack.layers[0].weights[:] = np.array([[1000.0, 0.0]])
        high = head_score(head, np.array([1.0]), 0.0)
        low = head_score(head, np.array([-1.0]), 0.0)
        assert 0.0 < low < high < 1.0


class TestFullLoss:
    def test_empty_store_equals_base_loss(self):
        rng = np.random.default_rng(6)
        model = build_model("dae_uai", 3, (4, 2), rng, noise_phi=0.0)
        x = rng.standard_normal((6, 3))
        batch = _BatchStub(x)
        value = full_loss(model, batch, _StoreStub())
        base_scores = model.score_batch(x, None).base
        np.testing.assert_allclose(value, base_scores.mean(), rtol=1e-12)

    def test_perfectly_matched_labels_add_nothing(self):
        rng = np.random.default_rng(7)
        model = build_model("dae_uai", 3, (4, 2), rng, noise_phi=0.0)
        # huge weights drive the head to saturation on every instance
        model.head.stack.layers[0].bias[:] = 1000.0
        x = rng.standard_normal((4, 3))
        batch = _BatchStub(x)
        with_labels = full_loss(model, batch, _StoreStub({i: 1 for i in range(4)}))
        without = full_loss(model, batch, _StoreStub())
        np.testing.assert_allclose(with_labels, without, atol=1e-12)

    def test_single_labeled_anomaly_quarter_probability(self):
        rng = np.random.default_rng(8)
        model = build_model("dae_uai", 3, (4, 2), rng, noise_phi=0.0)
        # zero weights, bias at logit(0.25), so the head says 0.25 everywhere
        model.head.stack.layers[0].bias[:] = np.log(0.25 / 0.75)
        x = rng.standard_normal((5, 3))
        batch = _BatchStub(x)
        with_label = full_loss(model, batch, _StoreStub({2: 1}))
        without = full_loss(model, batch, _StoreStub())
        np.testing.assert_allclose(with_label - without, -np.log(0.25), rtol=1e-9)
        np.testing.assert_allclose(with_label - without, 1.386294, atol=1e-6)


class TestTrainStepGradients:
    # seeds chosen so every relu pre-activation clears the kink-margin guard
    SEEDS = {"dae_uai": 6, "classnet_uai": 0}

    def _toy_setup(self, kind, seed=None):
        seed = self.SEEDS[kind] if seed is None else seed
        rng = np.random.default_rng(seed)
        num_classes = 3 if kind.startswith("classnet") else None
        model = build_model(kind, 5, (6, 4, 3), rng, num_classes=num_classes,
                            noise_phi=0.1)
        n = 8
        x = rng.standard_normal((n, 5))
        y = None
        if num_classes:
            y = np.zeros((n, num_classes))
            y[np.arange(n), rng.integers(0, num_classes, n)] = 1.0
        mask = np.zeros(n, dtype=bool)
        mask[[0, 3, 6]] = True
        targets = np.array([1.0, 0.0, 1.0])
        noise = 0.1 * rng.standard_normal(x.shape) if kind.startswith("dae") else None
        if model.head is not None:
            model.head.stack.layers[0].weights[:] = 0.05 * rng.standard_normal((1, 4))
        randomize_biases(model, rng)
        assert kink_margin(model, x, y, noise) > 1e-3  # oracle validity
        return model, x, y, mask, targets, noise

    def _head_loss_grads(self, model, x, y, mask, targets, noise):
        """Gradients of the head loss alone: full-loss grads minus base grads."""
        _, grads_full = model.forward_backward(x, y, mask, targets, noise)
        _, grads_base = model.forward_backward(
            x, y, np.zeros(x.shape[0], dtype=bool), np.empty(0), noise
        )
        return [f - b for f, b in zip(grads_full, grads_base)]

    def test_decoder_gets_exactly_zero_from_head_loss(self):
        model, x, y, mask, targets, noise = self._toy_setup("dae_uai")
        diff = self._head_loss_grads(model, x, y, mask, targets, noise)
        n_enc = len(model.base.encoder.parameters())
        n_dec = len(model.base.decoder.parameters())
        for grad in diff[n_enc:n_enc + n_dec]:
            assert np.all(grad == 0.0)

    def test_softmax_output_gets_exactly_zero_from_head_loss(self):
        model, x, y, mask, targets, noise = self._toy_setup("classnet_uai")
        diff = self._head_loss_grads(model, x, y, mask, targets, noise)
        n_trunk = len(model.base.trunk.parameters())
        for grad in diff[n_trunk:n_trunk + 2]:
            assert np.all(grad == 0.0)

    def test_encoder_gets_nonzero_from_head_loss(self):
        model, x, y, mask, targets, noise = self._toy_setup("dae_uai")
        diff = self._head_loss_grads(model, x, y, mask, targets, noise)
        n_enc = len(model.base.encoder.parameters())
        assert any(np.any(g != 0.0) for g in diff[:n_enc])

    @pytest.mark.parametrize("kind", ["dae_uai", "classnet_uai"])
    def test_joint_gradients_match_finite_differences(self, kind):
        model, x, y, mask, targets, noise = self._toy_setup(kind)
        _, _, worst = check_gradients(model, x, y, mask, targets, noise)
        assert worst < 1e-4

    def test_loss_decreases_on_fixed_batch(self):
        rng = np.random.default_rng(12)
        model = build_model("dae", 4, (8, 3), rng, noise_phi=0.05)
        opt = RmsProp(learning_rate=0.01)
        x = rng.standard_normal((32, 4))
        empty_mask = np.zeros(32, dtype=bool)
        first = model.train_step(x, None, empty_mask, np.empty(0), opt, rng)
        last = first
        for _ in range(199):
            last = model.train_step(x, None, empty_mask, np.empty(0), opt, rng)
        assert last < first

    def test_scores_respect_bounds(self):
        rng = np.random.default_rng(13)
        model = build_model("dae_uai", 4, (6, 3), rng)
        model.head.stack.layers[0].weights[:] = rng.standard_normal((1, 4))
        x = rng.standard_normal((50, 4)) * 3
        scores = model.score_batch(x, None)
        assert np.all(scores.base >= 0.0)
        assert np.all((scores.head > 0.0) & (scores.head < 1.0))


class TestBaseEquivalence:
    @pytest.mark.parametrize("kind", ["dae", "classnet"])
    def test_empty_store_training_is_bit_identical_to_base(self, kind):
        uai_kind = f"{kind}_uai"
        num_classes = 4 if kind == "classnet" else None
        n = 40
        base_rng = np.random.default_rng(100)
        x = base_rng.standard_normal((n, 6))
        y = None
        if num_classes:
            y = np.zeros((n, num_classes))
            y[np.arange(n), base_rng.integers(0, num_classes, n)] = 1.0

        trajectories = []
        for model_kind in (kind, uai_kind):
            rng = np.random.default_rng(55)
            model = build_model(model_kind, 6, (8, 4), rng,
                                num_classes=num_classes, noise_phi=0.1)
            opt = RmsProp(learning_rate=0.01)
            train_rng = np.random.default_rng(77)
            mask = np.zeros(n, dtype=bool)
            for _ in range(30):
                model.train_step(x, y, mask, np.empty(0), opt, train_rng)
            trajectories.append([p.copy() for p in model.base.parameters()])

        for a, b in zip(*trajectories):
            assert np.array_equal(a, b)


class TestModelCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(21)
        model = build_model("classnet_uai", 5, (6, 3), rng, num_classes=4)
        opt = RmsProp(learning_rate=0.02, decay=0.85, epsilon=1e-9)
        x = rng.standard_normal((16, 5))
        y = np.zeros((16, 4))
        y[np.arange(16), rng.integers(0, 4, 16)] = 1.0
        mask = np.zeros(16, dtype=bool)
        mask[:3] = True
        model.train_step(x, y, mask, np.array([1.0, 0.0, 1.0]), opt, rng)

        target = tmp_path / "model.npz"
        save_model_checkpoint(target, model, optimizer=opt, rng=rng)
        restored = load_model_checkpoint(target)

        for a, b in zip(model.parameters(), restored["model"].parameters()):
            assert np.array_equal(a, b)
        for a, b in zip(opt.state_arrays(), restored["optimizer"].state_arrays()):
            assert np.array_equal(a, b)
        assert restored["rng"].bit_generator.state == rng.bit_generator.state
        # the restored model scores identically
        a = model.score_batch(x, y)
        b = restored["model"].score_batch(x, y)
        assert np.array_equal(a.base, b.base)
        assert np.array_equal(a.head, b.head)

    def test_version_mismatch_raises(self, tmp_path):
        import json

        import numpy as np

        rng = np.random.default_rng(3)
        model = build_model("dae", 3, (4, 2), rng)
        target = tmp_path / "model.npz"
        save_model_checkpoint(target, model)
        with np.load(target) as bundle:
            meta = json.loads(bytes(bundle["meta_json"]).decode())
            arrays = {name: bundle[name] for name in bundle.files}
        meta["schema_version"] = 999
        arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(target, **arrays)
        with pytest.raises(MigrationError):
            load_model_checkpoint(target)
