"""Loss functions and the Gaussian corruption used by the denoising model."""

from __future__ import annotations

import numpy as np

from . import kernels
from .layers import ShapeError

PROB_FLOOR = 1e-12


def squared_error(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Squared L2 norm of the residual, sum((x - x_hat)^2)."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    return float(diff @ diff) if diff.ndim == 1 else float((diff * diff).sum())


def cross_entropy(target: np.ndarray, predicted: np.ndarray) -> float:
    """-sum(target * ln(predicted)), with predicted clamped to [1e-12, 1].

    Both arguments must be probability vectors (nonnegative, summing to 1
    within 1e-6).
    """
    target = np.asarray(target, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if target.shape != predicted.shape:
        raise ShapeError(f"shape mismatch: {target.shape} vs {predicted.shape}")
    if (target < 0).any() or (predicted < 0).any():
        raise ValueError("probability vectors must be nonnegative")
    for name, vec in (("target", target), ("predicted", predicted)):
        total = vec.sum()
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"{name} sums to {total}, not 1 within 1e-6")
    clipped = np.clip(predicted, PROB_FLOOR, 1.0)
    return float(-(target * np.log(clipped)).sum())


def binary_cross_entropy_with_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-element stable BCE: max(z,0) - z*y + log(1 + exp(-|z|))."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def batch_squared_error(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """Per-row squared L2 reconstruction error for a batch."""
    return kernels.row_squared_error(x, x_hat)


def batch_cross_entropy(target: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy for a batch of probability rows."""
    return kernels.row_cross_entropy(target, predicted)


def gaussian_noise(x: np.ndarray, phi: float, rng: np.random.Generator) -> np.ndarray:
    """x plus i.i.d. zero-mean Gaussian noise with standard deviation phi."""
    if phi < 0:
        raise ValueError(f"noise standard deviation must be >= 0, got {phi}")
    x = np.asarray(x, dtype=np.float64)
    if phi == 0.0:
        return x.copy()
    return x + phi * rng.standard_normal(x.shape)
