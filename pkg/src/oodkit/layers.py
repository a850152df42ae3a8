"""Network layers with explicit forward/backward passes (float64, CPU).

Every layer exposes forward(x, train) and backward(grad_out); parameter
gradients accumulate in .grads with the same keys as .params. Conv layers use
3x3 kernels with stride 1 and zero padding 1; pooling is 2x2 stride 2.
Image batches are (N, C, H, W), dense batches (N, F).
"""

import numpy as np

from .errors import ConfigError


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def output_shape(self, input_shape):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        scale = np.sqrt(2.0 / in_dim)
        self.params["W"] = rng.normal(0.0, scale, size=(in_dim, out_dim))
        if bias:
            self.params["b"] = np.zeros(out_dim)
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        out = x @ self.params["W"]
        if "b" in self.params:
            out = out + self.params["b"]
        return out

    def backward(self, grad_out):
        self.grads["W"] = self._x.T @ grad_out
        if "b" in self.params:
            self.grads["b"] = grad_out.sum(axis=0)
        return grad_out @ self.params["W"].T

    def output_shape(self, input_shape):
        if len(input_shape) != 1 or input_shape[0] != self.in_dim:
            raise ConfigError(
                f"dense layer expects ({self.in_dim},), got {input_shape}"
            )
        return (self.out_dim,)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out):
        return grad_out * self._mask

    def output_shape(self, input_shape):
        return input_shape


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


def _im2col(x, kh, kw, pad):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    cols = np.empty((n, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + oh, j : j + ow]
    return cols.reshape(n, c * kh * kw, oh * ow), (oh, ow)


def _col2im(cols, x_shape, kh, kw, pad, oh, ow):
    n, c, h, w = x_shape
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + oh, j : j + ow] += cols[:, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w]


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1 (same spatial size)."""

    def __init__(self, in_channels, out_channels, rng, bias=True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * 9
        scale = np.sqrt(2.0 / fan_in)
        self.params["W"] = rng.normal(0.0, scale, size=(out_channels, in_channels, 3, 3))
        if bias:
            self.params["b"] = np.zeros(out_channels)

    def forward(self, x, train=False):
        self._x_shape = x.shape
        cols, (oh, ow) = _im2col(x, 3, 3, 1)
        self._cols = cols
        self._ohw = (oh, ow)
        wmat = self.params["W"].reshape(self.out_channels, -1)
        out = np.einsum("of,nfp->nop", wmat, cols)
        if "b" in self.params:
            out = out + self.params["b"][None, :, None]
        return out.reshape(x.shape[0], self.out_channels, oh, ow)

    def backward(self, grad_out):
        n = grad_out.shape[0]
        oh, ow = self._ohw
        g = grad_out.reshape(n, self.out_channels, oh * ow)
        wmat = self.params["W"].reshape(self.out_channels, -1)
        self.grads["W"] = np.einsum("nop,nfp->of", g, self._cols).reshape(
            self.params["W"].shape
        )
        if "b" in self.params:
            self.grads["b"] = g.sum(axis=(0, 2))
        grad_cols = np.einsum("of,nop->nfp", wmat, g)
        return _col2im(grad_cols, self._x_shape, 3, 3, 1, oh, ow)

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if c != self.in_channels:
            raise ConfigError(
                f"conv expects {self.in_channels} channels, got {c}"
            )
        return (self.out_channels, h, w)


class MaxPool2(Layer):
    """2x2 max pooling, stride 2. Spatial dims must be even."""

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        self._x_shape = x.shape
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2)
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        self._argmax = flat.argmax(axis=4)
        return flat.max(axis=4)

    def backward(self, grad_out):
        n, c, h, w = self._x_shape
        grad_flat = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(
            grad_flat, self._argmax[..., None], grad_out[..., None], axis=4
        )
        blocks = grad_flat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(
            0, 1, 2, 4, 3, 5
        )
        return blocks.reshape(n, c, h, w)

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if h % 2 or w % 2:
            raise ConfigError(f"maxpool2 needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)


class BatchNorm(Layer):
    """Batch normalization over features (2-D input) or channels (4-D input).

    Training mode uses batch statistics and updates running averages with
    momentum 0.1; eval mode is the affine map given by the running stats.
    """

    def __init__(self, num_features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(num_features)
        self.params["beta"] = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _expand(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train=False):
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // self.num_features
            self.running_mean = (
                (1 - self.momentum) * self.running_mean + self.momentum * mean
            )
            unbiased = var * count / max(count - 1, 1)
            self.running_var = (
                (1 - self.momentum) * self.running_var + self.momentum * unbiased
            )
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x)) * self._expand(inv_std, x)
        self._train = train
        self._xhat = xhat
        self._inv_std = inv_std
        return self._expand(self.params["gamma"], x) * xhat + self._expand(
            self.params["beta"], x
        )

    def backward(self, grad_out):
        axes = self._axes(grad_out)
        xhat = self._xhat
        self.grads["gamma"] = np.sum(grad_out * xhat, axis=axes)
        self.grads["beta"] = np.sum(grad_out, axis=axes)
        g = grad_out * self._expand(self.params["gamma"], grad_out)
        if not self._train:
            return g * self._expand(self._inv_std, grad_out)
        count = grad_out.size // self.num_features
        sum_g = np.sum(g, axis=axes)
        sum_gx = np.sum(g * xhat, axis=axes)
        return (
            self._expand(self._inv_std, grad_out)
            * (g - self._expand(sum_g / count, grad_out)
               - xhat * self._expand(sum_gx / count, grad_out))
        )

    def output_shape(self, input_shape):
        return input_shape
