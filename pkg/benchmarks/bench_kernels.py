"""Benchmark the numba-jitted kernels against the pure-numpy fallbacks.

Run from the repository root:

    python benchmarks/bench_kernels.py

The numbers that matter are the elementwise/reduction kernels that fire on
every training step; matrix products go through BLAS on both paths, so a
whole-step comparison is included to show the realistic end-to-end gap.
Force the fallback for a whole test run with ACTIVEANOM_NUMBA=0.
"""

import time

import numpy as np

from activeanom.nn import kernels
from activeanom.data import two_regime_mixture
from activeanom.loop import ActiveRun, RunConfig


def time_call(fn, *args, repeat=300):
    fn(*args)  # warm (jit compile / cache touch)
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def bench_kernels():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((512, 256))
    d = rng.standard_normal((512, 256))
    probs = kernels.numpy_variants()["softmax_rows"](rng.standard_normal((512, 10)))
    target = np.zeros((512, 10))
    target[np.arange(512), rng.integers(0, 10, 512)] = 1.0
    param = rng.standard_normal(200_000)
    grad = rng.standard_normal(200_000)

    cases = {
        "relu": (z,),
        "relu_backward": (d, z),
        "sigmoid": (z,),
        "sigmoid_backward": (d, kernels.numpy_variants()["sigmoid"](z)),
        "softmax_rows": (rng.standard_normal((512, 10)),),
        "row_squared_error": (z, d),
        "row_cross_entropy": (target, probs),
        "rmsprop_update": (param, grad, np.zeros_like(param), 0.01, 0.9, 1e-10),
    }

    fallbacks = kernels.numpy_variants()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<20} {'active':>10} {'numpy':>10} {'speedup':>8}")
    for name, args in cases.items():
        active = time_call(getattr(kernels, name), *args)
        baseline = time_call(fallbacks[name], *args)
        print(f"{name:<20} {active*1e6:>8.1f}us {baseline*1e6:>8.1f}us "
              f"{baseline/active:>7.2f}x")


def bench_training_step():
    dataset = two_regime_mixture(seed=0, n_normal=3000, n_clustered=60, n_sparse=6)
    config = RunConfig(model_kind="dae_uai", budget=0, k=1, steps_pre=0,
                       hidden_sizes=(64, 32, 8), seed=0)
    run = ActiveRun(dataset, config)
    run.pretrain()  # zero steps; builds optimizer state lazily on first step
    start = time.perf_counter()
    run._train_steps(200)
    per_step = (time.perf_counter() - start) / 200
    print(f"\nfull training step (batch 256, 2-64-32-8-32-64-2 + head): "
          f"{per_step*1e3:.2f} ms under {kernels.BACKEND}")


if __name__ == "__main__":
    bench_kernels()
    bench_training_step()
