"""The numba-jitted kernels must agree with the pure-numpy fallbacks."""

import numpy as np
import pytest

from activeanom.nn import kernels


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(99)


def test_backend_is_reported():
    assert kernels.BACKEND in ("numba", "numpy")


@pytest.mark.parametrize("name", ["relu", "sigmoid", "softmax_rows"])
def test_elementwise_kernels_match_numpy(name, rng):
    active = getattr(kernels, name)
    reference = kernels.numpy_variants()[name]
    z = rng.standard_normal((17, 9)) * 3
    np.testing.assert_allclose(active(z), reference(z), rtol=1e-13, atol=1e-15)


def test_relu_backward_matches(rng):
    z = rng.standard_normal((13, 7))
    d = rng.standard_normal((13, 7))
    np.testing.assert_array_equal(
        kernels.relu_backward(d, z), kernels.numpy_variants()["relu_backward"](d, z)
    )


def test_sigmoid_backward_matches(rng):
    a = kernels.sigmoid(rng.standard_normal((13, 7)))
    d = rng.standard_normal((13, 7))
    np.testing.assert_allclose(
        kernels.sigmoid_backward(d, a),
        kernels.numpy_variants()["sigmoid_backward"](d, a),
        rtol=1e-14,
    )


def test_row_reductions_match(rng):
    x = rng.standard_normal((21, 11))
    y = rng.standard_normal((21, 11))
    np.testing.assert_allclose(
        kernels.row_squared_error(x, y),
        kernels.numpy_variants()["row_squared_error"](x, y),
        rtol=1e-12,
    )
    probs = kernels.softmax_rows(rng.standard_normal((21, 5)))
    target = np.zeros((21, 5))
    target[np.arange(21), rng.integers(0, 5, 21)] = 1.0
    np.testing.assert_allclose(
        kernels.row_cross_entropy(target, probs),
        kernels.numpy_variants()["row_cross_entropy"](target, probs),
        rtol=1e-12,
    )


def test_row_cross_entropy_clamps_tiny_probabilities():
    target = np.array([[1.0, 0.0]])
    predicted = np.array([[0.0, 1.0]])
    value = kernels.row_cross_entropy(target, predicted)
    np.testing.assert_allclose(value, [-np.log(1e-12)])


def test_rmsprop_update_matches_and_flags_nonfinite(rng):
    for impl in (kernels.rmsprop_update, kernels.numpy_variants()["rmsprop_update"]):
        param = np.array([1.0, -1.0, 0.5])
        accum = np.zeros(3)
        bad = impl(param, np.array([4.0, 0.0, -2.0]), accum, 0.01, 0.9, 1e-10)
        assert bad == 0
        np.testing.assert_allclose(accum, [1.6, 0.0, 0.4])
        np.testing.assert_allclose(
            param,
            [1.0 - 0.01 * 4 / (np.sqrt(1.6) + 1e-10), -1.0,
             0.5 + 0.01 * 2 / (np.sqrt(0.4) + 1e-10)],
        )

        param2 = np.ones(2)
        before = param2.copy()
        accum2 = np.zeros(2)
        bad = impl(param2, np.array([1.0, np.inf]), accum2, 0.01, 0.9, 1e-10)
        assert bad == 1
        # the parameter must not be partially updated on abort
        np.testing.assert_array_equal(param2, before)
