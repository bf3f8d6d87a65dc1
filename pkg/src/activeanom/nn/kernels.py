"""Hot numeric kernels, each with a numba-jitted and a pure-numpy path.

Matrix products go through BLAS either way and are not wrapped here. The
kernels below are the elementwise loops and per-row reductions that run on
every training step (activations, optimizer updates, per-instance losses),
where numba's loop fusion avoids the extra array passes the numpy versions
pay for.

Backend selection happens once at import time. The numba path is used when
numba is importable; set ``ACTIVEANOM_NUMBA=0`` to force the numpy fallback.
``benchmarks/bench_kernels.py`` compares the two. Results are deterministic
within a backend; the backends may differ in the last bits because their
reduction orders differ.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "softmax_rows",
    "row_squared_error",
    "row_cross_entropy",
    "rmsprop_update",
]

_PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# numpy path


def _np_relu(z):
    return np.maximum(z, 0.0)


def _np_relu_backward(d_out, z):
    return np.where(z > 0.0, d_out, 0.0)


def _np_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _np_sigmoid_backward(d_out, activated):
    return d_out * activated * (1.0 - activated)


def _np_softmax_rows(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_row_squared_error(x, x_hat):
    diff = x - x_hat
    return np.einsum("ij,ij->i", diff, diff)


def _np_row_cross_entropy(target, predicted):
    clipped = np.clip(predicted, _PROB_FLOOR, 1.0)
    return -np.einsum("ij,ij->i", target, np.log(clipped))


def _np_rmsprop_update(param, grad, accum, lr, decay, eps):
    if not np.all(np.isfinite(grad)):
        return 1
    np.multiply(accum, decay, out=accum)
    accum += (1.0 - decay) * grad * grad
    param -= lr * grad / (np.sqrt(accum) + eps)
    return 0


# ---------------------------------------------------------------------------
# numba path

_FORCED_OFF = os.environ.get("ACTIVEANOM_NUMBA", "").strip().lower() in (
    "0",
    "false",
    "off",
)

BACKEND = "numpy"

if not _FORCED_OFF:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = None
    if njit is not None:
        BACKEND = "numba"

        @njit(cache=True)
        def _nb_relu(z):
            out = np.empty_like(z)
            flat_in = z.ravel()
            flat_out = out.ravel()
            for i in range(flat_in.size):
                v = flat_in[i]
                flat_out[i] = v if v > 0.0 else 0.0
            return out

        @njit(cache=True)
        def _nb_relu_backward(d_out, z):
            out = np.empty_like(d_out)
            fd = d_out.ravel()
            fz = z.ravel()
            fo = out.ravel()
            for i in range(fd.size):
                fo[i] = fd[i] if fz[i] > 0.0 else 0.0
            return out

        @njit(cache=True)
        def _nb_sigmoid(z):
            out = np.empty_like(z)
            fz = z.ravel()
            fo = out.ravel()
            for i in range(fz.size):
                v = fz[i]
                if v >= 0.0:
                    fo[i] = 1.0 / (1.0 + np.exp(-v))
                else:
                    e = np.exp(v)
                    fo[i] = e / (1.0 + e)
            return out

        @njit(cache=True)
        def _nb_sigmoid_backward(d_out, activated):
            out = np.empty_like(d_out)
            fd = d_out.ravel()
            fa = activated.ravel()
            fo = out.ravel()
            for i in range(fd.size):
                a = fa[i]
                fo[i] = fd[i] * a * (1.0 - a)
            return out

        @njit(cache=True)
        def _nb_softmax_rows(z):
            n, m = z.shape
            out = np.empty_like(z)
            for i in range(n):
                row_max = z[i, 0]
                for j in range(1, m):
                    if z[i, j] > row_max:
                        row_max = z[i, j]
                total = 0.0
                for j in range(m):
                    e = np.exp(z[i, j] - row_max)
                    out[i, j] = e
                    total += e
                for j in range(m):
                    out[i, j] /= total
            return out

        @njit(cache=True)
        def _nb_row_squared_error(x, x_hat):
            n, m = x.shape
            out = np.empty(n, dtype=np.float64)
            for i in range(n):
                acc = 0.0
                for j in range(m):
                    d = x[i, j] - x_hat[i, j]
                    acc += d * d
                out[i] = acc
            return out

        @njit(cache=True)
        def _nb_row_cross_entropy(target, predicted):
            n, m = target.shape
            out = np.empty(n, dtype=np.float64)
            for i in range(n):
                acc = 0.0
                for j in range(m):
                    p = predicted[i, j]
                    if p < _PROB_FLOOR:
                        p = _PROB_FLOOR
                    elif p > 1.0:
                        p = 1.0
                    acc -= target[i, j] * np.log(p)
                out[i] = acc
            return out

        @njit(cache=True)
        def _nb_rmsprop_update(param, grad, accum, lr, decay, eps):
            fp = param.ravel()
            fg = grad.ravel()
            fa = accum.ravel()
            for i in range(fg.size):
                if not np.isfinite(fg[i]):
                    return 1
            one_minus = 1.0 - decay
            for i in range(fg.size):
                g = fg[i]
                a = decay * fa[i] + one_minus * g * g
                fa[i] = a
                fp[i] -= lr * g / (np.sqrt(a) + eps)
            return 0


if BACKEND == "numba":
    relu = _nb_relu
    relu_backward = _nb_relu_backward
    sigmoid = _nb_sigmoid
    sigmoid_backward = _nb_sigmoid_backward
    softmax_rows = _nb_softmax_rows
    row_squared_error = _nb_row_squared_error
    row_cross_entropy = _nb_row_cross_entropy
    rmsprop_update = _nb_rmsprop_update
else:
    relu = _np_relu
    relu_backward = _np_relu_backward
    sigmoid = _np_sigmoid
    sigmoid_backward = _np_sigmoid_backward
    softmax_rows = _np_softmax_rows
    row_squared_error = _np_row_squared_error
    row_cross_entropy = _np_row_cross_entropy
    rmsprop_update = _np_rmsprop_update


def numpy_variants() -> dict:
    """The pure-numpy implementations, keyed by kernel name (for benchmarks)."""
    return {
        "relu": _np_relu,
        "relu_backward": _np_relu_backward,
        "sigmoid": _np_sigmoid,
        "sigmoid_backward": _np_sigmoid_backward,
        "softmax_rows": _np_softmax_rows,
        "row_squared_error": _np_row_squared_error,
        "row_cross_entropy": _np_row_cross_entropy,
        "rmsprop_update": _np_rmsprop_update,
    }
