import numpy as np
import numpy.testing as npt
import pytest

from scenesed.errors import DegenerateBatch, ShapeError
from scenesed.nn.layers import (
    BatchNorm, Conv2d, FrameFlatten, GlobalMaxPool, Grl, LeakyReLU, Linear,
    MaxPool2d,
)

from helpers import layer_grad_check


class TestLeakyReLU:
    def test_definition(self):
        layer = LeakyReLU(0.01)
        npt.assert_allclose(layer.forward(np.array([1.0, -1.0]), True),
                            [1.0, -0.01])

    def test_zero_uses_slope_subgradient(self):
        layer = LeakyReLU(0.25)
        assert layer.forward(np.array([0.0]), True)[0] == 0.0
        # documented convention: subgradient at 0 is the slope
        assert layer.backward(np.array([1.0]))[0] == 0.25

    def test_invalid_slope(self):
        with pytest.raises(ValueError):
            LeakyReLU(0.0)
        with pytest.raises(ValueError):
            LeakyReLU(1.0)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 4))
        err = layer_grad_check(LeakyReLU(0.01), x)
        assert err < 1e-6


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        layer = Conv2d(1, 1, rng)
        layer.weight.value[...] = 0.0
        layer.weight.value[1, 1, 0, 0] = 1.0
        layer.bias.value[...] = 0.0
        x = rng.standard_normal((1, 1, 6, 5))
        npt.assert_array_equal(layer.forward(x, True), x)

    def test_ones_kernel_constant_field(self):
        rng = np.random.default_rng(0)
        layer = Conv2d(1, 1, rng)
        layer.weight.value[...] = 1.0
        layer.bias.value[...] = 0.7
        c = 2.5
        x = np.full((1, 1, 6, 6), c)
        y = layer.forward(x, True)
        # interior pixels see all nine taps
        npt.assert_allclose(y[0, 0, 2, 3], 9 * c + 0.7)

    def test_channel_mismatch(self):
        layer = Conv2d(2, 3, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((1, 1, 4, 4)), True)

    def test_gradient(self):
        rng = np.random.default_rng(7)
        layer = Conv2d(2, 3, rng)
        x = rng.standard_normal((2, 2, 5, 6))
        err = layer_grad_check(layer, x, seed=1)
        assert err < 1e-5


class TestBatchNorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(5)
        layer = BatchNorm(3)
        x = rng.standard_normal((4, 3, 6, 6)) * 2.0 + 1.0
        y = layer.forward(x, True)
        npt.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-9)
        npt.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_constant_channel(self):
        # variance is floored by eps, so the output is ~0 rather than 0/0
        layer = BatchNorm(1)
        x = np.full((3, 1, 2, 2), 4.2)
        y = layer.forward(x, True)
        assert np.isfinite(y).all()
        npt.assert_allclose(y, 0.0, atol=1e-9)

    def test_degenerate_batch(self):
        layer = BatchNorm(2)
        with pytest.raises(DegenerateBatch):
            layer.forward(np.zeros((1, 2, 3, 3)), True)

    def test_eval_uses_running_stats(self):
        rng = np.random.default_rng(2)
        layer = BatchNorm(2, momentum=1.0)  # adopt batch stats immediately
        x = rng.standard_normal((8, 2, 4, 4)) * 3.0 + 5.0
        layer.forward(x, True)
        y = layer.forward(x, False)
        npt.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        # single-item batches are fine in eval mode
        layer.forward(x[:1], False)

    def test_gradient(self):
        rng = np.random.default_rng(11)
        layer = BatchNorm(3)
        x = rng.standard_normal((4, 3, 6, 6))
        err = layer_grad_check(layer, x, seed=2, step=1e-5)
        assert err < 1e-4


class TestMaxPool:
    def test_definition(self):
        layer = MaxPool2d(1, 2)
        x = np.array([[1.0, 3.0], [2.0, 0.0]]).reshape(1, 1, 2, 2)
        npt.assert_array_equal(layer.forward(x, True).reshape(2, 1), [[3.0], [2.0]])

    def test_backward_routes_to_argmax(self):
        layer = MaxPool2d(1, 2)
        x = np.array([[1.0, 3.0], [2.0, 0.0]]).reshape(1, 1, 2, 2)
        layer.forward(x, True)
        dx = layer.backward(np.array([[5.0], [7.0]]).reshape(1, 1, 2, 1))
        npt.assert_array_equal(dx.reshape(2, 2), [[0.0, 5.0], [7.0, 0.0]])

    def test_tie_goes_to_first_in_scan_order(self):
        layer = MaxPool2d(1, 2)
        x = np.array([[2.0, 2.0]]).reshape(1, 1, 1, 2)
        layer.forward(x, True)
        dx = layer.backward(np.ones((1, 1, 1, 1)))
        npt.assert_array_equal(dx.reshape(2), [1.0, 0.0])

    def test_tail_truncation(self):
        layer = MaxPool2d(1, 2)
        x = np.arange(5.0).reshape(1, 1, 1, 5)
        y = layer.forward(x, True)
        npt.assert_array_equal(y.reshape(2), [1.0, 3.0])
        dx = layer.backward(np.ones((1, 1, 1, 2)))
        npt.assert_array_equal(dx.reshape(5), [0, 1, 0, 1, 0])

    def test_window_too_large(self):
        layer = MaxPool2d(4, 1)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((1, 1, 2, 2)), True)

    def test_gradient(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((1, 2, 6, 8))
        err = layer_grad_check(MaxPool2d(1, 2), x)
        assert err < 1e-6


class TestGlobalMaxPool:
    def test_single_spike(self):
        layer = GlobalMaxPool()
        x = np.zeros((1, 1, 3, 4))
        x[0, 0, 1, 2] = 5.0
        y = layer.forward(x, True)
        npt.assert_array_equal(y, [[5.0]])
        dx = layer.backward(np.array([[2.0]]))
        expected = np.zeros_like(x)
        expected[0, 0, 1, 2] = 2.0
        npt.assert_array_equal(dx, expected)

    def test_gradient(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((2, 3, 4, 5))
        err = layer_grad_check(GlobalMaxPool(), x)
        assert err < 1e-6


class TestLinear:
    def test_identity(self):
        rng = np.random.default_rng(0)
        layer = Linear(3, 3, rng)
        layer.weight.value[...] = np.eye(3)
        layer.bias.value[...] = 0.0
        x = rng.standard_normal((2, 3))
        npt.assert_array_equal(layer.forward(x, True), x)

    def test_hand_example(self):
        # y = Wx + b with W = [[1,1],[0,1]], b = [0,1], x = [1,2] -> [3,3]
        layer = Linear(2, 2, np.random.default_rng(0))
        w = np.array([[1.0, 1.0], [0.0, 1.0]])
        layer.weight.value[...] = w.T
        layer.bias.value[...] = [0.0, 1.0]
        npt.assert_array_equal(layer.forward(np.array([1.0, 2.0]), True), [3.0, 3.0])

    def test_shape_error(self):
        layer = Linear(4, 2, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            layer.forward(np.zeros(3), True)

    def test_sequence_input_keeps_leading_axes(self):
        rng = np.random.default_rng(1)
        layer = Linear(4, 2, rng)
        x = rng.standard_normal((3, 5, 4))
        assert layer.forward(x, True).shape == (3, 5, 2)

    def test_gradient(self):
        rng = np.random.default_rng(23)
        layer = Linear(8, 4, rng)
        x = rng.standard_normal((3, 8))
        err = layer_grad_check(layer, x)
        assert err < 1e-6


class TestGrl:
    def test_forward_is_identity(self):
        layer = Grl(0.7)
        x = np.random.default_rng(0).standard_normal((3, 4))
        y = layer.forward(x, True)
        assert y is x  # bitwise identical

    def test_backward_flips_sign(self):
        layer = Grl(1.0)
        npt.assert_array_equal(layer.backward(np.array([1.0, -2.0])), [-1.0, 2.0])

    def test_lambda_zero_blocks(self):
        layer = Grl(0.0)
        npt.assert_array_equal(layer.backward(np.array([3.0, -4.0])), [0.0, 0.0])

    def test_lambda_scales(self):
        layer = Grl(0.5)
        npt.assert_array_equal(layer.backward(np.array([2.0])), [-1.0])

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            Grl(-0.1)


class TestFrameFlatten:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        layer = FrameFlatten()
        x = rng.standard_normal((2, 3, 4, 5))
        y = layer.forward(x, True)
        assert y.shape == (2, 4, 15)
        # channel-major flattening per frame
        npt.assert_array_equal(y[1, 2], x[1, :, 2, :].reshape(-1))
        dx = layer.backward(y)
        npt.assert_array_equal(dx, x)


def test_gradient_soundness_over_seeds():
    # property: every layer's backward matches finite differences on random
    # double-precision probes, across many seeds
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x4 = rng.standard_normal((2, 2, 4, 6))
        assert layer_grad_check(LeakyReLU(0.01), x4.copy(), seed=seed) < 1e-5
        assert layer_grad_check(Conv2d(2, 2, rng), x4.copy(), seed=seed) < 1e-5
        assert layer_grad_check(BatchNorm(2), x4.copy(), seed=seed) < 1e-4
        assert layer_grad_check(MaxPool2d(1, 2), x4.copy(), seed=seed) < 1e-5
        assert layer_grad_check(GlobalMaxPool(), x4.copy(), seed=seed) < 1e-5
        x2 = rng.standard_normal((3, 5))
        assert layer_grad_check(Linear(5, 3, rng), x2, seed=seed) < 1e-5
