"""Dense layers, the forward tape, and backpropagation.

Only fixed stacks of dense layers are supported (this is the substrate the
anomaly models are built from, not a general autodiff engine). A forward
pass records the per-layer intermediates on a :class:`StackTape`; backward
walks the tape once, in reverse, and produces a gradient for every weight
and bias plus the gradient with respect to the stack input.

Stop-gradients are expressed as a per-column mask on a stack's *input*:
columns flagged as stopped always receive an exactly-zero input gradient,
so nothing upstream of them ever sees a contribution through that edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

ACTIVATIONS = ("relu", "sigmoid", "linear", "softmax")


class ShapeError(ValueError):
    """A tensor did not have the shape the operation requires."""


class TapeUsageError(RuntimeError):
    """Backward called without, or after consuming, a recorded forward pass."""


@dataclass
class DenseLayer:
    """One fully-connected layer: ``activation(weights @ x + bias)``.

    weights has shape (out_dim, in_dim); bias has shape (out_dim,).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError(
                f"weights must be 2-D and bias 1-D, got {self.weights.shape} "
                f"and {self.bias.shape}"
            )
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match "
                f"out_dim {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class StackTape:
    """Recorded intermediates of one forward pass through a layer stack.

    Backward consumes the tape: every recorded layer is visited exactly
    once, and a second backward on the same tape raises.
    """

    inputs: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    input_stop_mask: np.ndarray | None = None
    consumed: bool = False


def glorot_uniform(out_dim: int, in_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return kernels.relu(pre)
    if activation == "sigmoid":
        return kernels.sigmoid(pre)
    if activation == "softmax":
        return kernels.softmax_rows(pre)
    return pre.copy()


def _activation_backward(
    d_out: np.ndarray, pre: np.ndarray, out: np.ndarray, activation: str
) -> np.ndarray:
    if activation == "relu":
        return kernels.relu_backward(d_out, pre)
    if activation == "sigmoid":
        return kernels.sigmoid_backward(d_out, out)
    if activation == "softmax":
        # Only reachable through the fused softmax+cross-entropy path, which
        # hands backward() the pre-activation gradient directly.
        raise TapeUsageError(
            "softmax layers must be differentiated through their fused loss"
        )
    return d_out


class LayerStack:
    """An ordered stack of dense layers trained as a unit."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("a stack needs at least one layer")
        for below, above in zip(layers, layers[1:]):
            if above.in_dim != below.out_dim:
                raise ShapeError(
                    f"layer expects in_dim {above.in_dim} but the layer "
                    f"below produces {below.out_dim}"
                )
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for layer in self.layers:
            params.append(layer.weights)
            params.append(layer.bias)
        return params

    def forward(
        self, x: np.ndarray, input_stop_mask: np.ndarray | None = None
    ) -> tuple[np.ndarray, StackTape]:
        """Run the stack on a batch (rows are instances); records a tape.

        ``input_stop_mask`` marks input columns as stop-gradient: forward
        values flow, but backward() zeroes their input gradient exactly.
        """
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
        if x.shape[1] != self.in_dim:
            raise ShapeError(
                f"input width {x.shape[1]} does not match stack in_dim {self.in_dim}"
            )
        tape = StackTape(input_stop_mask=input_stop_mask)
        current = x
        for layer in self.layers:
            pre = current @ layer.weights.T + layer.bias
            out = _activate(pre, layer.activation)
            tape.inputs.append(current)
            tape.pre_activations.append(pre)
            tape.outputs.append(out)
            current = out
        return current, tape

    def backward(
        self,
        tape: StackTape,
        d_out: np.ndarray,
        d_out_is_pre_activation: bool = False,
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Backpropagate ``d_out`` through the recorded pass.

        Returns (gradients, d_input) where gradients matches parameters()
        order. ``d_out_is_pre_activation`` is used by fused losses (softmax
        cross-entropy) that already differentiated through the final
        activation.
        """
        if tape is None or not tape.outputs:
            raise TapeUsageError("backward requires a recorded forward pass")
        if tape.consumed:
            raise TapeUsageError("tape already consumed by a previous backward")
        if len(tape.outputs) != len(self.layers):
            raise TapeUsageError("tape does not belong to this stack")
        tape.consumed = True

        grads: list[np.ndarray] = [np.empty(0)] * (2 * len(self.layers))
        d_current = d_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == len(self.layers) - 1 and d_out_is_pre_activation:
                d_pre = d_current
            else:
                d_pre = _activation_backward(
                    d_current, tape.pre_activations[i], tape.outputs[i],
                    layer.activation,
                )
            grads[2 * i] = d_pre.T @ tape.inputs[i]
            grads[2 * i + 1] = d_pre.sum(axis=0)
            d_current = d_pre @ layer.weights
        if tape.input_stop_mask is not None:
            d_current = d_current * tape.input_stop_mask
        return grads, d_current


def mlp(
    sizes: list[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "linear",
) -> LayerStack:
    """Build a stack from layer widths [in, h1, ..., out], glorot weights, zero biases."""
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output width")
    layers = []
    for i in range(len(sizes) - 1):
        act = output_activation if i == len(sizes) - 2 else hidden_activation
        layers.append(
            DenseLayer(
                weights=glorot_uniform(sizes[i + 1], sizes[i], rng),
                bias=np.zeros(sizes[i + 1]),
                activation=act,
            )
        )
    return LayerStack(layers)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Single-layer, single-vector forward: activation(weights @ x + bias)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {x.shape}")
    if x.shape[0] != layer.in_dim:
        raise ShapeError(
            f"input length {x.shape[0]} does not match layer in_dim {layer.in_dim}"
        )
    out, _ = LayerStack([layer]).forward(x[None, :])
    return out[0]
