"""RMSprop with a per-parameter squared-gradient accumulator."""

from __future__ import annotations

import numpy as np

from . import kernels


class TrainingDiverged(RuntimeError):
    """A non-finite gradient or loss was produced; the run must abort."""


class RmsProp:
    """accum <- decay*accum + (1-decay)*g^2; theta <- theta - lr*g/(sqrt(accum)+eps).

    Updates are in place. Accumulators are created on first step and mirror
    the parameter shapes exactly.
    """

    def __init__(
        self,
        learning_rate: float = 0.01,
        decay: float = 0.9,
        epsilon: float = 1e-10,
    ):
        if not 0.0 < decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {decay}")
        if epsilon <= 0.0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        if learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.accumulators: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.accumulators is None:
            self.accumulators = [np.zeros_like(p) for p in params]
        if len(params) != len(grads) or len(params) != len(self.accumulators):
            raise ValueError("params, grads and accumulators must align")
        for param, grad, accum in zip(params, grads, self.accumulators):
            if param.shape != grad.shape:
                raise ValueError(
                    f"gradient shape {grad.shape} does not match "
                    f"parameter shape {param.shape}"
                )
            grad = np.ascontiguousarray(grad, dtype=np.float64)
            bad = kernels.rmsprop_update(
                param, grad, accum, self.learning_rate, self.decay, self.epsilon
            )
            if bad:
                raise TrainingDiverged("non-finite gradient in optimizer step")

    def state_arrays(self) -> list[np.ndarray]:
        """Accumulators for checkpointing (empty until the first step)."""
        return list(self.accumulators) if self.accumulators is not None else []

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        self.accumulators = [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]
