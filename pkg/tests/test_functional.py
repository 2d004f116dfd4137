import time

import numpy as np
import pytest

from src import functional as F
from src.config import Precision
from src.errors import ShapeError
from src.tensor import Tensor, backward, precision


def loop_conv2d(x, weight, bias, stride):
    """Direct nested-loop cross-correlation of an already padded input."""
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    total = bias[f]
                    for ch in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                total += x[b, ch, i * stride + di, j * stride + dj] * weight[f, ch, di, dj]
                    out[b, f, i, j] = total
    return out


def test_conv_first_layer_shape(rng):
    x = Tensor(rng.standard_normal((1, 3, 256, 256)))
    w = Tensor(rng.standard_normal((64, 3, 7, 7)) * 0.1)
    out = F.conv2d(x, w, Tensor(np.zeros(64)), stride=1, padding=3, pad_mode="reflect")
    assert out.shape == (1, 64, 256, 256)


def test_conv_downsampling_shape(rng):
    x = Tensor(rng.standard_normal((1, 64, 256, 256)))
    w = Tensor(rng.standard_normal((128, 64, 4, 4)) * 0.05)
    out = F.conv2d(x, w, None, stride=2, padding=1)
    assert out.shape == (1, 128, 128, 128)


def test_conv_identity_kernel(rng):
    x = Tensor(rng.standard_normal((1, 1, 3, 3)))
    out = F.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    assert np.array_equal(out.data, x.data)


@pytest.mark.parametrize("stride,padding,mode", [(1, 0, "zero"), (2, 1, "zero"), (1, 1, "reflect"), (2, 2, "reflect")])
def test_conv_matches_loop_oracle(rng, stride, padding, mode):
    with precision(Precision.CHECK64):
        x = Tensor(rng.standard_normal((2, 4, 8, 8)))
        w = Tensor(rng.standard_normal((3, 4, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        out = F.conv2d(x, w, b, stride, padding, mode)
        padded = F.pad2d(x, padding, mode).data
    expected = loop_conv2d(padded, w.data, b.data, stride)
    assert out.shape == expected.shape
    assert np.allclose(out.data, expected, rtol=1e-12, atol=1e-12)


def test_conv_loop_oracle_small_instance(rng):
    with precision(Precision.CHECK64):
        x = Tensor(rng.standard_normal((1, 1, 6, 6)))
        w = Tensor(rng.standard_normal((1, 1, 4, 4)))
        out = F.conv2d(x, w, None, stride=2, padding=1)
        expected = loop_conv2d(F.pad2d(x, 1).data, w.data, np.zeros(1), 2)
    assert out.shape == (1, 1, 3, 3)
    assert np.allclose(out.data, expected, rtol=1e-12, atol=1e-12)


def windowed_conv_grads(x, weight, grad, stride):
    """Weight and input gradients of an unpadded convolution from explicit windows."""
    kh, kw = weight.shape[2:]
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    dw = np.einsum("nohw,nchwij->ocij", grad, windows)
    dx = np.zeros_like(x)
    for i in range(grad.shape[2]):
        for j in range(grad.shape[3]):
            dx[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw] += np.einsum(
                "no,ocij->ncij", grad[:, :, i, j], weight)
    return dw, dx


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward_matches_windowed_reference(rng, stride):
    with precision(Precision.CHECK64):
        x = Tensor(rng.standard_normal((2, 5, 9, 8)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 5, 3, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        out = F.conv2d(x, w, b, stride)
        upstream = rng.standard_normal(out.shape)
        backward(F.sum(F.mul(out, Tensor(upstream))))
    dw, dx = windowed_conv_grads(x.data, w.data, upstream, stride)
    assert np.allclose(w.grad, dw, rtol=1e-12, atol=1e-12)
    assert np.allclose(x.grad, dx, rtol=1e-12, atol=1e-12)
    assert np.allclose(b.grad, upstream.sum(axis=(0, 2, 3)), rtol=1e-12, atol=1e-12)


@pytest.mark.slow
def test_wide_conv_runs_at_blas_speed(rng):
    x = Tensor(rng.standard_normal((1, 256, 16, 16)), requires_grad=True)
    w = Tensor(rng.standard_normal((128, 256, 5, 5)) * 0.01, requires_grad=True)
    start = time.perf_counter()
    out = F.conv2d(x, w, None, padding=2)
    backward(F.sum(out))
    assert time.perf_counter() - start < 0.25
    assert w.grad.flags["C_CONTIGUOUS"]


def test_conv_channel_mismatch_names_dimensions(rng):
    x = Tensor(rng.standard_normal((1, 3, 8, 8)))
    w = Tensor(rng.standard_normal((4, 2, 3, 3)))
    with pytest.raises(ShapeError, match="3 channels.*expects 2"):
        F.conv2d(x, w, None)


def test_conv_rejects_bad_stride_and_padding(rng):
    x = Tensor(rng.standard_normal((1, 1, 4, 4)))
    w = Tensor(rng.standard_normal((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        F.conv2d(x, w, None, stride=0)
    with pytest.raises(ShapeError):
        F.conv2d(x, w, None, padding=-1)


def test_reflect_pad_mirrors_without_edge_repeat():
    x = Tensor(np.arange(4.0).reshape(1, 1, 1, 4) * np.ones((1, 1, 3, 1)))
    out = F.pad2d(x, 2, "reflect")
    assert np.array_equal(out.data[0, 0, 0], [2, 1, 0, 1, 2, 3, 2, 1])


def test_relu_and_leaky_relu():
    assert np.array_equal(F.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert np.allclose(F.leaky_relu(Tensor([-10.0]), 0.2).data, [-2.0])


def test_relu_gradient_at_and_around_kink():
    x = Tensor([-1.0, 2.0, 0.0], requires_grad=True)
    backward(F.sum(F.relu(x)))
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_instance_norm_constant_channel_is_zero():
    x = Tensor(np.full((1, 2, 4, 4), 3.0))
    out = F.instance_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.allclose(out.data, 0.0)


def test_instance_norm_statistics(rng):
    x = Tensor(rng.standard_normal((2, 3, 8, 8)) * 5.0 + 2.0)
    out = F.instance_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data.astype(np.float64)
    assert np.all(np.abs(out.mean(axis=(2, 3))) < 1e-5)
    assert np.all(np.abs(out.var(axis=(2, 3)) - 1.0) < 1e-3)
    scaled = F.instance_norm(x, Tensor(np.full(3, 2.0)), Tensor(np.ones(3))).data.astype(np.float64)
    assert np.allclose(scaled.mean(axis=(2, 3)), 1.0, atol=1e-3)
    assert np.allclose(scaled.std(axis=(2, 3)), 2.0, atol=1e-3)


def test_instance_norm_rejects_single_pixel():
    with pytest.raises(ShapeError):
        F.instance_norm(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)))


def test_adain_statistics(rng):
    x = Tensor(rng.standard_normal((1, 4, 8, 8)) * 3.0 - 1.0)
    gamma = rng.uniform(-2.0, 2.0, 4)
    beta = rng.standard_normal(4)
    out = F.adain(x, Tensor(gamma), Tensor(beta)).data.astype(np.float64)
    assert np.allclose(out.mean(axis=(0, 2, 3)), beta, atol=1e-3)
    assert np.allclose(out.std(axis=(0, 2, 3)), np.abs(gamma), atol=1e-3)


def test_adain_zero_scale_gives_shift(rng):
    x = Tensor(rng.standard_normal((1, 3, 4, 4)))
    beta = np.array([0.5, -1.0, 2.0])
    out = F.adain(x, Tensor(np.zeros(3)), Tensor(beta))
    assert np.allclose(out.data, beta[None, :, None, None] * np.ones((1, 3, 4, 4)))


def test_adain_parameter_count_mismatch(rng):
    with pytest.raises(ShapeError):
        F.adain(Tensor(rng.standard_normal((1, 3, 4, 4))), Tensor(np.ones(2)), Tensor(np.zeros(3)))


def test_global_avg_pool():
    assert F.global_avg_pool(Tensor(np.full((1, 1, 3, 3), 5.0))).data.item() == 5.0
    out = F.global_avg_pool(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)))
    assert out.data.item() == 2.5
    assert F.global_avg_pool(Tensor(np.zeros((1, 256, 16, 16)))).shape == (1, 256, 1, 1)


def test_avg_pool_ignores_padding_in_the_count():
    out = F.avg_pool2d(Tensor(np.full((1, 2, 8, 8), 7.0)), 3, 2, 1)
    assert out.shape == (1, 2, 4, 4)
    assert np.allclose(out.data, 7.0)


def test_fully_connected(rng):
    x = Tensor(rng.standard_normal((1, 4)))
    assert np.allclose(F.fully_connected(x, Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x.data)
    b = np.array([1.0, -2.0])
    assert np.allclose(F.fully_connected(x, Tensor(np.zeros((2, 4))), Tensor(b)).data, [b])
    pooled = Tensor(rng.standard_normal((1, 256, 1, 1)))
    code = F.fully_connected(pooled, Tensor(rng.standard_normal((8, 256))), Tensor(np.zeros(8)))
    assert code.shape == (1, 8)
    with pytest.raises(ShapeError):
        F.fully_connected(x, Tensor(np.zeros((2, 5))), Tensor(b))


def test_upsample_nearest():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2), requires_grad=True)
    out = F.upsample_nearest(x, 2)
    assert np.array_equal(out.data[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    backward(F.sum(out))
    assert np.array_equal(x.grad, np.full((1, 1, 2, 2), 4.0))
    assert F.upsample_nearest(Tensor(np.zeros((1, 256, 64, 64))), 2).shape == (1, 256, 128, 128)
    with pytest.raises(ShapeError):
        F.upsample_nearest(x, 1)


def test_l1_distance(rng):
    a = Tensor([1.0, 2.0])
    b = Tensor([0.0, 0.0])
    assert F.l1_distance(a, a).item() == 0.0
    assert F.l1_distance(a, b).item() == 1.5
    x, y = Tensor(rng.standard_normal(6)), Tensor(rng.standard_normal(6))
    assert F.l1_distance(x, y).item() == F.l1_distance(y, x).item()
    with pytest.raises(ShapeError):
        F.l1_distance(a, Tensor([1.0]))


def test_shape_after_conv():
    assert F.shape_after_conv(256, 7, 1, 3) == 256
    assert F.shape_after_conv(256, 4, 2, 1) == 128
