"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete. The discovery-oriented criteria train real models;
the whole module takes a few minutes on a desktop CPU.

The directional criterion prefers real MNIST IDX files when present
(``ACTIVEANOM_MNIST_DIR`` or ./data, files train-images-idx3-ubyte[.gz] and
train-labels-idx1-ubyte[.gz]); otherwise it runs on the bundled synthetic
2-D mixture carrying both anomaly regimes, with the same ordering
assertions.
"""

import math
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from activeanom.checkpoint import load_run_checkpoint
from activeanom.data import (
    SyntheticSpec,
    dataset_stats,
    load_idx,
    nested_group_field,
    stratified_subsample,
    synthesize_hard,
    synthesize_reduced_class,
    synthetic_blobs,
    two_regime_mixture,
)
from activeanom.evaluation import discovery_curve, f1_at_contamination
from activeanom.loop import (
    ActiveRun,
    LabelStore,
    OracleExpert,
    Parked,
    RunConfig,
    run_active,
    select_top_k,
)
from activeanom.models import build_model
from activeanom.nn import kernels

from fdcheck import check_gradients, kink_margin, randomize_biases

SEEDS = (1, 2, 3, 4, 5)
DESK_HIDDEN = (8, 4)


def _report(name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[ACCEPTANCE] {name}: {status}{suffix}")
    assert passed, f"{name}: {detail}"


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # jit compilation is an environment cost, not part of any criterion's time
    z = np.ones((4, 4))
    kernels.relu(z)
    kernels.sigmoid(z)
    kernels.softmax_rows(z)
    kernels.row_squared_error(z, z)
    kernels.row_cross_entropy(z / 4.0, z / 4.0)
    kernels.rmsprop_update(np.ones(4), np.ones(4), np.zeros(4), 0.01, 0.9, 1e-10)


def _mean_found(dataset, kind, budget, k, steps_pre, steps_active=100):
    found = []
    for seed in SEEDS:
        config = RunConfig(
            model_kind=kind, budget=budget, k=k, steps_pre=steps_pre,
            steps_active=steps_active, hidden_sizes=DESK_HIDDEN, seed=seed,
        )
        result = run_active(None, dataset, OracleExpert(dataset), config)
        found.append(result.curve[-1][1] if result.curve else 0)
    return float(np.mean(found)), found


class TestGradientSuite:
    def test_analytic_gradients_match_finite_differences(self):
        """Criterion: rel err < 1e-4 on random toy nets, runtime < 10 s."""
        start = time.perf_counter()
        worst_overall = 0.0
        # seeds picked to keep every relu pre-activation clear of the kink
        # (the margin assert below protects against regressions)
        cases = [
            ("dae_uai", None, 16), ("dae_uai", None, 27),
            ("classnet_uai", 3, 1), ("classnet_uai", 4, 0),
        ]
        for kind, num_classes, seed in cases:
            rng = np.random.default_rng(seed)
            model = build_model(kind, input_dim=16, hidden_sizes=(8, 6, 4), rng=rng,
                                num_classes=num_classes, noise_phi=0.1)
            n = 10
            x = rng.standard_normal((n, 16))
            y = None
            if num_classes:
                y = np.zeros((n, num_classes))
                y[np.arange(n), rng.integers(0, num_classes, n)] = 1.0
            mask = np.zeros(n, dtype=bool)
            mask[[0, 4, 7, 9]] = True
            targets = np.array([1.0, 0.0, 1.0, 0.0])
            noise = 0.1 * rng.standard_normal(x.shape) if kind.startswith("dae") else None
            model.head.stack.layers[0].weights[:] = 0.05 * rng.standard_normal(
                (1, model.head.latent_dim + 1))
            randomize_biases(model, rng)
            assert kink_margin(model, x, y, noise) > 1e-3, "seed too close to a relu kink"
            _, _, worst = check_gradients(model, x, y, mask, targets, noise)
            worst_overall = max(worst_overall, worst)
        elapsed = time.perf_counter() - start
        _report(
            "gradient-suite",
            worst_overall < 1e-4 and elapsed < 10.0,
            f"worst rel err {worst_overall:.2e}, {elapsed:.1f}s",
        )


class TestStopGradient:
    def _head_loss_grads(self, kind, num_classes, seed):
        rng = np.random.default_rng(seed)
        model = build_model(kind, input_dim=10, hidden_sizes=(8, 4), rng=rng,
                            num_classes=num_classes, noise_phi=0.1)
        model.head.stack.layers[0].weights[:] = 0.1 * rng.standard_normal((1, 5))
        n = 12
        x = rng.standard_normal((n, 10))
        y = None
        if num_classes:
            y = np.zeros((n, num_classes))
            y[np.arange(n), rng.integers(0, num_classes, n)] = 1.0
        mask = np.zeros(n, dtype=bool)
        mask[[1, 5, 8]] = True
        targets = np.array([1.0, 1.0, 0.0])
        noise = 0.1 * rng.standard_normal(x.shape) if kind.startswith("dae") else None
        _, grads_full = model.forward_backward(x, y, mask, targets, noise)
        _, grads_base = model.forward_backward(
            x, y, np.zeros(n, dtype=bool), np.empty(0), noise)
        return model, [f - b for f, b in zip(grads_full, grads_base)]

    def test_blocked_paths_are_exactly_zero_open_paths_are_not(self):
        """Criterion: head-loss gradient is 0.0 bit-exactly past the score edge."""
        model, diff = self._head_loss_grads("dae_uai", None, 11)
        n_enc = len(model.base.encoder.parameters())
        n_dec = len(model.base.decoder.parameters())
        decoder_zero = all(np.all(g == 0.0) for g in diff[n_enc:n_enc + n_dec])
        encoder_nonzero = any(np.any(g != 0.0) for g in diff[:n_enc])

        model, diff = self._head_loss_grads("classnet_uai", 4, 12)
        n_trunk = len(model.base.trunk.parameters())
        softmax_zero = all(np.all(g == 0.0) for g in diff[n_trunk:n_trunk + 2])
        trunk_nonzero = any(np.any(g != 0.0) for g in diff[:n_trunk])

        _report(
            "stop-gradient",
            decoder_zero and softmax_zero and encoder_nonzero and trunk_nonzero,
            "decoder/softmax exactly 0, encoder/trunk nonzero",
        )


class TestSelectionOracle:
    def test_matches_full_sort_oracle_on_1000_cases(self):
        """Criterion: exact agreement with an independent sort, ties included."""
        rng = np.random.default_rng(2024)
        mismatches = 0
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            # quantized scores make ties frequent
            scores = np.round(rng.random(n) * 8) / 8.0
            labeled = set(
                int(i) for i in
                rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False)
            )
            k = int(rng.integers(0, n + 3))
            expected = [i for i in sorted(range(n), key=lambda j: (-scores[j], j))
                        if i not in labeled][:k]
            if select_top_k(scores, labeled, k) != expected:
                mismatches += 1
        _report("selection-oracle", mismatches == 0, f"{mismatches} mismatches in 1000")


class TestSynthesisFractions:
    def test_reduced_class_fractions_are_exact(self):
        """Criterion: lambda = 1/91 (one class) and 3/73 (three classes)."""
        base = synthetic_blobs(num_classes=10, per_class=200, dim=4, seed=0)
        one = synthesize_reduced_class(
            base,
            SyntheticSpec(mode="reduced_class", anomaly_classes=(0,), keep_fraction=0.1),
            np.random.default_rng(1),
        )
        three = synthesize_reduced_class(
            base,
            SyntheticSpec(mode="reduced_class", anomaly_classes=(0, 1, 2), keep_fraction=0.1),
            np.random.default_rng(2),
        )
        s1, s3 = dataset_stats(one), dataset_stats(three)
        ok = (
            Fraction(s1.anomaly_count, s1.n) == Fraction(1, 91)
            and Fraction(s3.anomaly_count, s3.n) == Fraction(3, 73)
        )
        _report(
            "synthesis-fractions", ok,
            f"{s1.anomaly_count}/{s1.n} and {s3.anomaly_count}/{s3.n}",
        )


def _mnist_dataset():
    """The reduced-class benchmark on real MNIST when IDX files are around."""
    candidates = []
    env_dir = os.environ.get("ACTIVEANOM_MNIST_DIR")
    if env_dir:
        candidates.append(Path(env_dir))
    candidates.append(Path("data"))
    for directory in candidates:
        for suffix in ("", ".gz"):
            images = directory / f"train-images-idx3-ubyte{suffix}"
            labels = directory / f"train-labels-idx1-ubyte{suffix}"
            if images.exists() and labels.exists():
                base = load_idx(images, labels)
                reduced = synthesize_reduced_class(
                    base,
                    SyntheticSpec(mode="reduced_class", anomaly_classes=(0,),
                                  keep_fraction=0.1),
                    np.random.default_rng(5),
                )
                return stratified_subsample(reduced, 0.1, np.random.default_rng(6))
    return None


class TestDirectionalDiscovery:
    def test_feedback_heads_beat_their_bases(self):
        """Criterion: dae_uai >= 3x dae and classnet_uai >= classnet (5-seed means)."""
        start = time.perf_counter()
        dataset = _mnist_dataset()
        source = "mnist-subsample"
        if dataset is None:
            dataset = two_regime_mixture(seed=20260808)
            source = "bundled two-regime mixture"

        means = {}
        per_seed = {}
        for kind in ("dae", "dae_uai", "classnet", "classnet_uai"):
            means[kind], per_seed[kind] = _mean_found(
                dataset, kind, budget=200, k=10, steps_pre=2000)
        elapsed = time.perf_counter() - start
        ok = (
            means["dae_uai"] >= 3.0 * means["dae"]
            and means["classnet_uai"] >= means["classnet"]
            and elapsed < 1800.0
        )
        _report(
            "directional-discovery", ok,
            f"{source}: dae {means['dae']:.1f} vs dae_uai {means['dae_uai']:.1f}, "
            f"classnet {means['classnet']:.1f} vs classnet_uai "
            f"{means['classnet_uai']:.1f}, {elapsed:.0f}s",
        )


class TestRobustnessAcrossAnomalyTypes:
    def _benchmark(self, dataset, steps_pre):
        stats = dataset_stats(dataset)
        budget = min(int(1.5 * stats.anomaly_count), int(0.1 * stats.n))
        means = {}
        for kind in ("dae", "classnet", "dae_uai", "classnet_uai"):
            means[kind], _ = _mean_found(
                dataset, kind, budget=budget, k=10, steps_pre=steps_pre)
        best_base = max(means["dae"], means["classnet"])
        return means, best_base

    def test_each_feedback_model_clears_both_regimes(self):
        """Criterion: every *_uai >= 0.8x the better base on both datasets."""
        base = synthetic_blobs(num_classes=10, per_class=600, dim=8, seed=77,
                               center_spread=3.0, sigma=0.8)
        reduced = synthesize_reduced_class(
            base,
            SyntheticSpec(mode="reduced_class", anomaly_classes=(0,), keep_fraction=0.1),
            np.random.default_rng(7),
        )
        hard_base = nested_group_field(num_classes=10, per_class=600, dim=16, seed=78)
        hard = synthesize_hard(
            hard_base,
            SyntheticSpec(mode="hard", weak_hidden_width=4),
            np.random.default_rng(8),
        )

        details = []
        ok = True
        for name, dataset, steps_pre in (
            ("reduced_class", reduced, 1200),
            ("hard", hard, 1500),
        ):
            means, best = self._benchmark(dataset, steps_pre)
            ratio_dae = means["dae_uai"] / best
            ratio_class = means["classnet_uai"] / best
            ok = ok and ratio_dae >= 0.8 and ratio_class >= 0.8
            details.append(
                f"{name}: best base {best:.1f}, dae_uai {ratio_dae:.2f}x, "
                f"classnet_uai {ratio_class:.2f}x"
            )
        _report("robustness-across-anomaly-types", ok, "; ".join(details))


class _InterruptingExpert:
    """Oracle that answers n audits, then parks the run (simulated crash)."""

    def __init__(self, dataset, n):
        self.inner = OracleExpert(dataset)
        self.remaining = n

    def audit(self, indices, pending=None):
        if self.remaining == 0:
            return None
        self.remaining -= 1
        return self.inner.audit(indices, pending)


class TestDeterminism:
    CONFIG = dict(model_kind="dae_uai", budget=30, k=10, steps_pre=100,
                  steps_active=20, batch_size=64, hidden_sizes=(8, 4), seed=17)

    def test_reruns_and_resume_are_byte_identical(self, tmp_path):
        """Criterion: identical config+seed => byte-identical result JSON."""
        dataset = two_regime_mixture(seed=9, n_normal=900, n_clustered=30, n_sparse=6)
        config = RunConfig(**self.CONFIG)
        first = run_active(None, dataset, OracleExpert(dataset), config)
        second = run_active(None, dataset, OracleExpert(dataset), config)
        rerun_identical = first.to_json() == second.to_json()

        checkpoint = tmp_path / "determinism.npz"
        interrupted = ActiveRun(dataset, config)
        outcome = interrupted.advance(
            _InterruptingExpert(dataset, 1), checkpoint_path=checkpoint)
        parked = isinstance(outcome, Parked)
        restored = load_run_checkpoint(checkpoint, dataset)
        resumed = restored.advance(OracleExpert(dataset), checkpoint_path=checkpoint)
        resume_identical = parked and resumed.to_json() == first.to_json()

        _report(
            "determinism", rerun_identical and resume_identical,
            f"rerun identical: {rerun_identical}, crash/resume identical: {resume_identical}",
        )


class TestCurveAndF1Properties:
    def test_curves_are_monotone_and_f1_matches_hand_counts(self):
        """Criterion: curve bounds plus 20 hand-checked confusion matrices."""
        dataset = two_regime_mixture(seed=10, n_normal=900, n_clustered=30, n_sparse=6)
        config = RunConfig(model_kind="classnet_uai", budget=30, k=5, steps_pre=80,
                           steps_active=10, batch_size=64, hidden_sizes=(8, 4), seed=3)
        result = run_active(None, dataset, OracleExpert(dataset), config)
        curve = discovery_curve(result).points
        total = int(dataset.anomaly_truth.sum())
        monotone = all(
            b[0] >= a[0] and b[1] >= a[1] for a, b in zip(curve, curve[1:])
        )
        bounded = all(found <= min(spent, total) for spent, found in curve)

        rng = np.random.default_rng(99)
        f1_ok = True
        for _ in range(20):
            truth = (rng.random(10) < 0.3).astype(int)
            scores = rng.random(10)
            store = LabelStore()
            audited = rng.choice(10, size=int(rng.integers(0, 6)), replace=False)
            store.extend((int(i), int(truth[i])) for i in audited)
            rho = float(rng.uniform(0.1, 0.9))
            ours = f1_at_contamination(scores, store, truth, rho)

            # hand recount: build the predicted set, then the confusion matrix
            target = math.ceil(rho * 10)
            predicted = {int(i) for i in audited if truth[i] == 1}
            for i in sorted(range(10), key=lambda j: (-scores[j], j)):
                if len(predicted) >= target:
                    break
                if i in set(int(a) for a in audited):
                    continue
                predicted.add(i)
            tp = sum(1 for i in predicted if truth[i])
            fp = len(predicted) - tp
            fn = int(truth.sum()) - tp
            by_hand = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
            f1_ok = f1_ok and (abs(ours - by_hand) < 1e-12)

        _report(
            "curve-and-f1-properties", monotone and bounded and f1_ok,
            f"curve points {len(curve)}, 20 F1 cases checked",
        )
