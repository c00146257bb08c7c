"""This script contains testing of convolution, transposed convolution, pooling and
upsampling
"""

import numpy as np
import pytest

from tkf_autodiff import conv, ops
from tkf_autodiff.gradcheck import finite_diff_check
from tkf_autodiff.tensor import Tensor


def __check(fn, params, seed=0):
    """ Gradient-checks sum(fn(params) * R) for a fixed random R """
    with_weights = {}

    def weighted(p):
        out = fn(p)
        if 'R' not in with_weights:
            rng = np.random.default_rng(seed)
            with_weights['R'] = Tensor(rng.standard_normal(out.shape))
        return ops.sum(out * with_weights['R'])

    return finite_diff_check(weighted, params, max_coords=30, min_scale=1e-6)


def test_output_extents():
    """ floor((H + 2p - k) / s) + 1 and its transpose """
    assert conv.conv_output_extent(7, 3, 2, 1) == 4
    assert conv.conv_output_extent(32, 3, 2, 1) == 16
    assert conv.transposed_output_extent(4, 2, 2, 0) == 8
    assert conv.transposed_output_extent(4, 3, 2, 1, 1) == 8


def test_conv2d_example():
    """ A 2x2 all-ones kernel with stride 2 sums every block """
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    weight = Tensor(np.ones((1, 1, 2, 2)))
    out = conv.conv2d(x, weight, stride=2)
    np.testing.assert_allclose(out.data, [[[[10.0, 18.0], [42.0, 50.0]]]])

    out = conv.conv2d(x, weight, bias=Tensor(np.array([1.0])), stride=2)
    np.testing.assert_allclose(out.data, [[[[11.0, 19.0], [43.0, 51.0]]]])


def test_conv2d_padding_shape():
    """ Padding keeps a 3x3 convolution's extents at stride 1 """
    out = conv.conv2d(Tensor(np.ones((2, 3, 5, 6))), Tensor(np.ones((4, 3, 3, 3))), padding=1)
    assert out.shape == (2, 4, 5, 6)
    # Corner outputs only see 2x2 of the kernel window on each of 3 channels
    assert out.data[0, 0, 0, 0] == pytest.approx(12.0)


def test_conv2d_errors():
    """ Channel mismatch, bad stride and oversized kernels are rejected """
    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        conv.conv2d(x, Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        conv.conv2d(x, Tensor(np.ones((1, 2, 3, 3))), stride=0)
    with pytest.raises(ValueError):
        conv.conv2d(x, Tensor(np.ones((1, 2, 5, 5))))
    with pytest.raises(ValueError):
        conv.transposed_conv2d(x, Tensor(np.ones((2, 1, 2, 2))), stride=0)
    with pytest.raises(ValueError):
        conv.transposed_conv2d(x, Tensor(np.ones((3, 1, 2, 2))), stride=2)


def test_transposed_conv_scatters_blocks():
    """ With kernel = stride = 2 every input pixel fills its own 2x2 block """
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = conv.transposed_conv2d(x, Tensor(np.ones((1, 1, 2, 2))), stride=2)
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
    np.testing.assert_allclose(out.data[0, 0], expected)

    weight = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    out = conv.transposed_conv2d(x, weight, stride=2)
    np.testing.assert_allclose(out.data[0, 0, :2, :2], [[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_allclose(out.data[0, 0, 2:, 2:], [[0.0, 4.0], [8.0, 12.0]])


def test_transposed_conv_is_the_adjoint():
    """ <conv(x, W), y> == <x, conv^T(y, W)> over random shapes, strides and paddings """
    rng = np.random.default_rng(7)
    for _ in range(100):
        stride = int(rng.integers(1, 4))
        kernel = int(rng.integers(1, 5))
        padding = int(rng.integers(0, kernel))
        height = int(rng.integers(max(kernel - 2 * padding, 1), 9))
        width = int(rng.integers(max(kernel - 2 * padding, 1), 9))
        in_channels = int(rng.integers(1, 4))
        out_channels = int(rng.integers(1, 4))
        batch = int(rng.integers(1, 3))

        x = rng.standard_normal((batch, in_channels, height, width))
        weight = rng.standard_normal((out_channels, in_channels, kernel, kernel))
        out = conv.conv2d(Tensor(x), Tensor(weight), stride=stride, padding=padding)
        y = rng.standard_normal(out.shape)

        extra = (height + 2 * padding - kernel) % stride
        back = conv.transposed_conv2d(Tensor(y), Tensor(weight), stride=stride, padding=padding,
                                      output_padding=extra)
        assert back.shape == x.shape
        assert np.sum(out.data * y) == pytest.approx(np.sum(x * back.data), rel=1e-9, abs=1e-9)


def test_conv2d_gradients():
    """ Input, weight and bias gradients match finite differences """
    rng = np.random.default_rng(1)
    params = {'x': Tensor(rng.standard_normal((2, 3, 6, 5))),
              'w': Tensor(rng.standard_normal((4, 3, 3, 3))),
              'b': Tensor(rng.standard_normal(4))}
    report = __check(lambda p: conv.conv2d(p['x'], p['w'], p['b'], stride=2, padding=1), params)
    assert report.passed, report.worst_coordinate


def test_transposed_conv_gradients():
    """ Transposed convolution gradients, with padding and output padding """
    rng = np.random.default_rng(2)
    params = {'x': Tensor(rng.standard_normal((2, 3, 3, 4))),
              'w': Tensor(rng.standard_normal((3, 2, 3, 3))),
              'b': Tensor(rng.standard_normal(2))}
    report = __check(lambda p: conv.transposed_conv2d(p['x'], p['w'], p['b'], stride=2,
                                                      padding=1, output_padding=1), params)
    assert report.passed, report.worst_coordinate


def test_max_pool():
    """ 3x3 stride 2 pooling with -inf padding, and its gradient """
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4) - 100.0)
    out = conv.max_pool2d(x)
    np.testing.assert_allclose(out.data[0, 0], [[-95.0, -93.0], [-87.0, -85.0]])

    rng = np.random.default_rng(3)
    report = __check(lambda p: conv.max_pool2d(p['x']),
                     {'x': Tensor(rng.standard_normal((2, 2, 6, 6)))})
    assert report.passed, report.worst_coordinate


def test_avg_pool_and_upsample():
    """ Block averaging, nearest upsampling and their gradients """
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    np.testing.assert_allclose(conv.avg_pool2d(x, 2).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    up = conv.upsample_nearest(Tensor(np.array([[[[1.0, 2.0]]]])), 2)
    np.testing.assert_allclose(up.data[0, 0], [[1.0, 1.0, 2.0, 2.0], [1.0, 1.0, 2.0, 2.0]])
    with pytest.raises(ValueError):
        conv.avg_pool2d(Tensor(np.ones((1, 1, 3, 4))), 2)

    rng = np.random.default_rng(4)
    report = __check(lambda p: conv.upsample_nearest(conv.avg_pool2d(p['x'], 2), 4),
                     {'x': Tensor(rng.standard_normal((1, 2, 4, 4)))})
    assert report.passed, report.worst_coordinate
