"""Minimal reverse-mode tensor engine: exactly the layers, loss and
optimizer the reconstruction network needs, nothing more.

Layers are small classes holding ``Tensor`` parameters; ``forward`` caches
whatever ``backward`` needs and ``backward`` accumulates parameter
gradients while returning the input gradient.  Convolutions run as im2col
matrix products so the heavy lifting stays in BLAS; the input gradient of a
convolution is computed as a full correlation of the (stride-dilated)
output gradient with the flipped kernel, which keeps that path in BLAS as
well.

Training runs in float32; gradient-check suites build float64 layers (the
dtype follows the parameters).  All randomness is injected through numpy
generators so every forward pass is reproducible from seeds.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ConfigError, NumericError

__all__ = [
    "Tensor", "Conv2d", "BatchNorm2d", "MaxPool2", "Upsample2",
    "Dropout", "ReLU", "Sigmoid", "bce_loss", "Adam", "conv_output_size",
]


class Tensor:
    """A parameter array with a gradient slot of the same shape."""

    __slots__ = ("values", "grad")

    def __init__(self, values):
        self.values = np.asarray(values)
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def add_grad(self, g):
        if self.grad is None:
            self.grad = g.astype(self.values.dtype, copy=True)
        else:
            self.grad += g


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ConfigError(
            f"convolution collapses spatial size {size} (k={kernel}, "
            f"s={stride}, p={padding})")
    return out


class Conv2d:
    """Cross-correlation with zero padding; kernel is square.

    Weights start fan-in-scaled uniform ``U(-1/sqrt(C_in k^2), +...)``,
    biases start at zero.
    """

    def __init__(self, in_channels, out_channels, kernel=4, stride=1,
                 padding=1, rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(in_channels * kernel * kernel)
        self.weight = Tensor(rng.uniform(
            -bound, bound, (out_channels, in_channels, kernel, kernel)
        ).astype(dtype))
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype))
        self._cache = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ConfigError(
                f"conv expects {self.in_channels} channels, got {c}")
        p = self.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        else:
            x = np.ascontiguousarray(x)
        oh = conv_output_size(h, self.kernel, self.stride, p)
        ow = conv_output_size(w, self.kernel, self.stride, p)
        out = np.empty((n, self.out_channels, oh, ow), dtype=x.dtype)
        _kernels.conv2d_forward(x, self.weight.values, self.bias.values,
                                self.stride, out)
        self._cache = (x, (h, w))
        return out

    def backward(self, dout):
        x_pad, (h, w) = self._cache
        p = self.padding
        dout = np.ascontiguousarray(dout)
        dw = np.zeros_like(self.weight.values)
        db = np.zeros_like(self.bias.values)
        _kernels.conv2d_backward_weights(x_pad, dout, self.stride, dw, db)
        self.weight.add_grad(dw)
        self.bias.add_grad(db)
        dx_pad = np.zeros_like(x_pad)
        _kernels.conv2d_backward_input(dout, self.weight.values, self.stride,
                                       dx_pad)
        if p:
            dx_pad = np.ascontiguousarray(dx_pad[:, :, p:p + h, p:p + w])
        return dx_pad


class BatchNorm2d:
    """Per-channel batch normalization over (N, H, W), momentum 0.1.

    Training normalizes by batch statistics (population variance) and
    updates running stats; evaluation normalizes by the running stats.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=dtype))
        self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def forward(self, x, training=False):
        if x.shape[1] != self.channels:
            raise ConfigError(
                f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        g = self.gamma.values.reshape(1, -1, 1, 1)
        b = self.beta.values.reshape(1, -1, 1, 1)
        if training:
            m = x.shape[0] * x.shape[2] * x.shape[3]
            if m <= 1:
                raise NumericError(
                    "batchnorm needs more than one value per channel in training")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            ivar = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean.reshape(1, -1, 1, 1)) * ivar.reshape(1, -1, 1, 1)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
            self._cache = (xhat, ivar, m, True)
            return g * xhat + b
        ivar = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean.reshape(1, -1, 1, 1)) * ivar.reshape(1, -1, 1, 1)
        self._cache = (xhat, ivar, None, False)
        return g * xhat + b

    def backward(self, dout):
        xhat, ivar, m, was_training = self._cache
        self.gamma.add_grad((dout * xhat).sum(axis=(0, 2, 3)))
        self.beta.add_grad(dout.sum(axis=(0, 2, 3)))
        g = self.gamma.values.reshape(1, -1, 1, 1)
        dxhat = dout * g
        if not was_training:
            return dxhat * ivar.reshape(1, -1, 1, 1)
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (ivar.reshape(1, -1, 1, 1) / m) * (m * dxhat - s1 - xhat * s2)


class MaxPool2:
    """2x2 max pooling, stride 2, odd trailing rows/cols dropped.

    Ties route the gradient to the first maximum in row-major window order.
    """

    def __init__(self):
        self._cache = None

    def params(self):
        return []

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        x = np.ascontiguousarray(x)
        out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
        idx = np.empty(out.shape, dtype=np.uint8)
        _kernels.maxpool2_forward(x, out, idx)
        self._cache = (idx, (n, c, h, w))
        return out

    def backward(self, dout):
        idx, (n, c, h, w) = self._cache
        dx = np.zeros((n, c, h, w), dtype=dout.dtype)
        _kernels.maxpool2_backward(np.ascontiguousarray(dout), idx, dx)
        return dx


class Upsample2:
    """Nearest-neighbor x2 upsampling; backward sums each 2x2 block."""

    def params(self):
        return []

    def forward(self, x, training=False):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, dout):
        n, c, h, w = dout.shape
        return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Dropout:
    """Inverted dropout: zero with probability ``rate`` in training and
    scale survivors by 1/(1-rate); identity in evaluation."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def params(self):
        return []

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ConfigError("training-mode dropout needs a generator")
        keep = (rng.random(x.shape) >= self.rate)
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class ReLU:
    def params(self):
        return []

    def forward(self, x, training=False):
        self._pos = x > 0  # subgradient 0 at exactly 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._pos


class Sigmoid:
    def params(self):
        return []

    def forward(self, x, training=False):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._out = out
        return out

    def backward(self, dout):
        return dout * self._out * (1.0 - self._out)


_BCE_CLAMP = 1e-7


def bce_loss(prediction, target):
    """Average binary cross-entropy with a global 1/2 factor.

    ``L = -(1/2N) sum[Q log P + (1-Q) log(1-P)]`` over all N elements, with
    P clamped to [1e-7, 1 - 1e-7] (zero gradient where the clamp binds).
    Returns ``(loss, dL/dprediction)``.
    """
    prediction = np.asarray(prediction)
    target = np.asarray(target)
    if prediction.shape != target.shape:
        raise ConfigError(
            f"prediction {prediction.shape} vs target {target.shape}")
    p = np.clip(prediction, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    n = p.size
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).sum() / (2 * n)
    inside = (prediction > _BCE_CLAMP) & (prediction < 1.0 - _BCE_CLAMP)
    grad = -(target / p - (1.0 - target) / (1.0 - p)) / (2 * n)
    grad = (grad * inside).astype(prediction.dtype)
    return float(loss), grad


class Adam:
    """Bias-corrected Adam over a list of Tensors."""

    def __init__(self, params, lr=0.002, beta1=0.9, beta2=0.99, epsilon=1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.values) for p in self.params]
        self.second_moment = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            if g is None:
                continue
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
