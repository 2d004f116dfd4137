"""Differentiable operations used by the networks and losses.

Image tensors use the batch x channels x height x width layout. Every forward
returns a new array; inputs are never written to.
"""

from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ShapeError
from .tensor import Function, Tensor

NORM_EPS = 1e-5
PAD_MODES = ("zero", "reflect")


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (self.unbroadcast(grad * self.b, self.a.shape),
                self.unbroadcast(grad * self.a, self.b.shape))


class Scale(Function):
    def forward(self, x, factor):
        self.factor = x.dtype.type(factor)
        return x * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


class Shift(Function):
    def forward(self, x, offset):
        return x + x.dtype.type(offset)

    def backward(self, grad):
        return (grad,)


class Square(Function):
    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (2 * grad * self.x,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Sigmoid(Function):
    def forward(self, x):
        self.y = expit(x).astype(x.dtype, copy=False)
        return self.y

    def backward(self, grad):
        return (grad * self.y * (1 - self.y),)


class Tanh(Function):
    def forward(self, x):
        self.y = np.tanh(x)
        return self.y

    def backward(self, grad):
        return (grad * (1 - self.y * self.y),)


class Clip(Function):
    def forward(self, x, low, high):
        self.inside = (x >= low) & (x <= high)
        return np.clip(x, x.dtype.type(low), x.dtype.type(high))

    def backward(self, grad):
        return (grad * self.inside,)


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class LeakyRelu(Function):
    def forward(self, x, slope):
        self.slope = np.where(x > 0, 1.0, slope).astype(x.dtype)
        return x * self.slope

    def backward(self, grad):
        return (grad * self.slope,)


# ---------------------------------------------------------------------------
# Reductions and reshaping
# ---------------------------------------------------------------------------

class Sum(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad / np.prod(self.shape), self.shape).astype(grad.dtype),)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape).copy()

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class SliceLast(Function):
    """Contiguous range along the last axis."""

    def forward(self, x, start, stop):
        self.shape, self.start, self.stop = x.shape, start, stop
        return x[..., start:stop].copy()

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[..., self.start:self.stop] = grad
        return (full,)


# ---------------------------------------------------------------------------
# Image operations
# ---------------------------------------------------------------------------

class Pad2d(Function):
    def forward(self, x, padding, mode):
        self.shape, self.padding, self.mode = x.shape, padding, mode
        width = ((0, 0), (0, 0), (padding, padding), (padding, padding))
        return np.pad(x, width, mode="reflect" if mode == "reflect" else "constant")

    def backward(self, grad):
        p = self.padding
        _, _, h, w = self.shape
        if self.mode == "zero":
            return (grad[:, :, p:p + h, p:p + w].copy(),)
        # Fold each padded row/column back onto the source pixel it mirrors
        rows = _reflect_index(h, p)
        cols = _reflect_index(w, p)
        folded = np.zeros(grad.shape[:2] + (h, grad.shape[3]), dtype=grad.dtype)
        np.add.at(folded, (slice(None), slice(None), rows), grad)
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, (slice(None), slice(None), slice(None), cols), folded)
        return (out,)


def _reflect_index(n: int, p: int) -> np.ndarray:
    idx = np.arange(-p, n + p)
    idx = np.abs(idx)
    return np.where(idx >= n, 2 * (n - 1) - idx, idx)


class Conv2d(Function):
    """Unpadded strided cross-correlation, one matmul per kernel offset.

    Weights are regrouped offset-major (kh x kw x out x in) so every per-offset
    matrix is contiguous and the products go through BLAS.
    """

    def forward(self, x, weight, bias, stride):
        n, c, h, w = x.shape
        o, _, kh, kw = weight.shape
        ho, wo = shape_after_conv(h, kh, stride, 0), shape_after_conv(w, kw, stride, 0)
        self.x, self.weight, self.stride, self.out_hw = x, weight, stride, (ho, wo)
        taps = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
        out = np.zeros((n, o, ho * wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += taps[i, j] @ self._window(x, i, j)
        out += bias[None, :, None]
        return out.reshape(n, o, ho, wo)

    def _window(self, x, i, j):
        ho, wo = self.out_hw
        s = self.stride
        patch = x[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
        return patch.reshape(x.shape[0], x.shape[1], ho * wo)

    def backward(self, grad):
        need_x, need_w, need_b = self.needs_input_grad
        n, o, ho, wo = grad.shape
        kh, kw = self.weight.shape[2:]
        s = self.stride
        g = np.ascontiguousarray(grad.reshape(n, o, ho * wo))
        dx = np.zeros_like(self.x) if need_x else None
        dw_taps = np.zeros((kh, kw) + self.weight.shape[:2], dtype=self.weight.dtype) if need_w else None
        taps_t = np.ascontiguousarray(self.weight.transpose(2, 3, 1, 0)) if need_x else None
        for i in range(kh):
            for j in range(kw):
                if need_w:
                    cols = self._window(self.x, i, j)
                    dw_taps[i, j] = (g @ cols.transpose(0, 2, 1)).sum(axis=0)
                if need_x:
                    dcols = taps_t[i, j] @ g
                    dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                        dcols.reshape(n, -1, ho, wo)
        dw = np.ascontiguousarray(dw_taps.transpose(2, 3, 0, 1)) if need_w else None
        db = grad.sum(axis=(0, 2, 3)) if need_b else None
        return dx, dw, db


class InstanceNorm(Function):
    """Per-sample, per-channel spatial normalization followed by a channel affine."""

    def forward(self, x, gamma, beta, eps):
        mean = x.mean(axis=(2, 3), keepdims=True)
        var = x.var(axis=(2, 3), keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
        self.xhat = (x - mean) * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        m = self.xhat.shape[2] * self.xhat.shape[3]
        dxhat = grad * self.gamma[None, :, None, None]
        dx = (self.inv_std / m) * (
            m * dxhat
            - dxhat.sum(axis=(2, 3), keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=(2, 3), keepdims=True)
        )
        dgamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        return dx, dgamma, dbeta


class GlobalAvgPool(Function):
    def forward(self, x):
        self.shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad):
        h, w = self.shape[2:]
        return (np.broadcast_to(grad / (h * w), self.shape).astype(grad.dtype),)


class AvgPool2d(Function):
    """Average pooling over zero-padded windows, dividing by the in-image pixel count."""

    def forward(self, x, kernel, stride, padding):
        n, c, h, w = x.shape
        self.shape, self.kernel, self.stride, self.padding = x.shape, kernel, stride, padding
        ho = (h + 2 * padding - kernel) // stride + 1
        wo = (w + 2 * padding - kernel) // stride + 1
        self.out_hw = (ho, wo)
        width = ((0, 0), (0, 0), (padding, padding), (padding, padding))
        xp = np.pad(x, width)
        ones = np.pad(np.ones((h, w), dtype=x.dtype), width[2:])
        total = np.zeros((n, c, ho, wo), dtype=x.dtype)
        self.count = np.zeros((ho, wo), dtype=x.dtype)
        for i in range(kernel):
            for j in range(kernel):
                rows = slice(i, i + stride * (ho - 1) + 1, stride)
                cols = slice(j, j + stride * (wo - 1) + 1, stride)
                total += xp[:, :, rows, cols]
                self.count += ones[rows, cols]
        return total / self.count

    def backward(self, grad):
        n, c, h, w = self.shape
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = self.out_hw
        share = grad / self.count
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += share
        return (dxp[:, :, p:p + h, p:p + w].copy(),)


class Linear(Function):
    def forward(self, x, weight, bias):
        self.x, self.weight = x, weight
        return x @ weight.T + bias

    def backward(self, grad):
        return grad @ self.weight, grad.T @ self.x, grad.sum(axis=0)


class UpsampleNearest(Function):
    def forward(self, x, factor):
        self.factor = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


class L1Distance(Function):
    def forward(self, a, b):
        self.diff = a - b
        return np.asarray(np.abs(self.diff).mean(), dtype=a.dtype)

    def backward(self, grad):
        g = np.sign(self.diff) * (grad / self.diff.size)
        return g, -g


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _require_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a 4-D batch x channels x height x width tensor, got {x.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=factor)


def shift(x: Tensor, offset: float) -> Tensor:
    return Shift.apply(x, offset=offset)


def square(x: Tensor) -> Tensor:
    return Square.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    return Clip.apply(x, low=low, high=high)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return LeakyRelu.apply(x, slope=slope)


def sum(x: Tensor) -> Tensor:  # noqa: A001
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape[0]) if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else tuple(shape)
    return Reshape.apply(x, shape=shape)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[-1]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for last extent {x.shape[-1]}")
    return SliceLast.apply(x, start=start, stop=stop)


def pad2d(x: Tensor, padding: int, mode: str = "zero") -> Tensor:
    _require_4d(x, "pad2d")
    if mode not in PAD_MODES:
        raise ValueError(f"pad mode must be one of {PAD_MODES}, got {mode!r}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    if mode == "reflect" and padding >= min(x.shape[2:]):
        raise ShapeError(f"reflect padding {padding} needs height and width > {padding}, got {x.shape[2:]}")
    if padding == 0:
        return x
    return Pad2d.apply(x, padding=padding, mode=mode)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor],
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zero",
) -> Tensor:
    """2-D cross-correlation; output extent is floor((H + 2p - K) / stride) + 1 per axis."""
    _require_4d(x, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be out x in x kh x kw, got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels but weight expects {weight.shape[1]} "
            f"(input {x.shape}, weight {weight.shape})"
        )
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0]), dtype=weight.dtype)
    elif bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {weight.shape[0]} filters")
    x = pad2d(x, padding, pad_mode)
    if x.shape[2] < weight.shape[2] or x.shape[3] < weight.shape[3]:
        raise ShapeError(f"conv2d: padded input {x.shape[2:]} smaller than kernel {weight.shape[2:]}")
    return Conv2d.apply(x, weight, bias, stride=stride)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    _require_4d(x, "instance_norm")
    if x.shape[2] * x.shape[3] == 1:
        raise ShapeError(f"instance_norm: spatial extent 1x1 cannot be normalized (input {x.shape})")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(
            f"instance_norm: gamma {gamma.shape} / beta {beta.shape} must hold {channels} values"
        )
    return InstanceNorm.apply(x, gamma, beta, eps=eps)


def adain(content_feat: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize each channel, then scale and shift it with style-derived parameters."""
    _require_4d(content_feat, "adain")
    channels = content_feat.shape[1]
    if gamma.size != channels or beta.size != channels:
        raise ShapeError(
            f"adain: got {gamma.size} scales and {beta.size} shifts for {channels} channels"
        )
    if gamma.shape != (channels,):
        gamma = reshape(gamma, (channels,))
    if beta.shape != (channels,):
        beta = reshape(beta, (channels,))
    return instance_norm(content_feat, gamma, beta, eps)


def global_avg_pool(x: Tensor) -> Tensor:
    _require_4d(x, "global_avg_pool")
    return GlobalAvgPool.apply(x)


def avg_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    _require_4d(x, "avg_pool2d")
    return AvgPool2d.apply(x, kernel=kernel, stride=stride, padding=padding)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of the flattened input: batch x in -> batch x out."""
    if x.ndim != 2:
        x = reshape(x, (x.shape[0], -1))
    if weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input length {x.shape[1]} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias {bias.shape} does not match {weight.shape[0]} outputs")
    return Linear.apply(x, weight, bias)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    _require_4d(x, "upsample_nearest")
    if factor < 2:
        raise ShapeError(f"upsample factor must be >= 2, got {factor}")
    return UpsampleNearest.apply(x, factor=factor)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute elementwise difference."""
    _require_same_shape(a, b, "l1_distance")
    return L1Distance.apply(a, b)


def mse_to(x: Tensor, target: float) -> Tensor:
    """Mean squared deviation from a constant label."""
    return mean(square(shift(x, -target)))


def total(terms: Sequence[Tensor]) -> Tensor:
    """Left-to-right sum of scalar tensors."""
    result = terms[0]
    for term in terms[1:]:
        result = add(result, term)
    return result


def shape_after_conv(extent: int, kernel: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - kernel) // stride + 1
