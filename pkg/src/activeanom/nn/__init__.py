"""Dense-network substrate: layers, tape backprop, losses, RMSprop."""

from .kernels import BACKEND
from .layers import (
    ACTIVATIONS,
    DenseLayer,
    LayerStack,
    ShapeError,
    StackTape,
    TapeUsageError,
    dense_forward,
    glorot_uniform,
    mlp,
)
from .losses import (
    batch_cross_entropy,
    batch_squared_error,
    binary_cross_entropy_with_logits,
    cross_entropy,
    gaussian_noise,
    squared_error,
)
from .optim import RmsProp, TrainingDiverged

__all__ = [
    "ACTIVATIONS",
    "BACKEND",
    "DenseLayer",
    "LayerStack",
    "RmsProp",
    "ShapeError",
    "StackTape",
    "TapeUsageError",
    "TrainingDiverged",
    "batch_cross_entropy",
    "batch_squared_error",
    "binary_cross_entropy_with_logits",
    "cross_entropy",
    "dense_forward",
    "gaussian_noise",
    "glorot_uniform",
    "mlp",
    "squared_error",
]
