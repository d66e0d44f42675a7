"""Minimal numpy layer stack with hand-written forward/backward passes.

Everything runs on float64 arrays in NCHW layout. Layers store forward
activations only when ``forward(..., cache=True)`` is used (training);
inference passes leave the layer objects untouched, so concurrent forward
passes over shared weights are safe.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def im2col(x, kernel, stride, pad):
    """Unfold (N,C,H,W) into patch columns of shape (N, C*k*k, Ho*Wo)."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kernel, kernel, ho, wo), dtype=x.dtype)
    for u in range(kernel):
        for v in range(kernel):
            cols[:, :, u, v] = x[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride]
    return cols.reshape(n, c * kernel * kernel, ho * wo), ho, wo


def col2im(cols, x_shape, kernel, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patch columns back onto the grid."""
    n, c, h, w = x_shape
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    cols = cols.reshape(n, c, kernel, kernel, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for u in range(kernel):
        for v in range(kernel):
            out[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += cols[:, :, u, v]
    if pad:
        out = out[:, :, pad:h + pad, pad:w + pad]
    return out


def kaiming_normal(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Layer:
    """Base layer. Parameters are exposed as (name, value, grad) triples."""

    def param_items(self):
        return []

    def zero_grad(self):
        for _, _, g in self.param_items():
            g[...] = 0.0

    def forward(self, x, cache=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def out_shape(self, shape):
        """Propagate a (C, H, W) shape through the layer."""
        return shape


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, rng=None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.w = kaiming_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.b = np.zeros(out_channels, dtype=DTYPE)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols = None
        self._x_shape = None

    def param_items(self):
        return [("weight", self.w, self.dw), ("bias", self.b, self.db)]

    def out_shape(self, shape):
        c, h, w = shape
        k, s, p = self.kernel, self.stride, self.pad
        return (self.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def forward(self, x, cache=False):
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"Conv2d expected {self.in_channels} input channels, got {x.shape[1]}")
        cols, ho, wo = im2col(x, self.kernel, self.stride, self.pad)
        if cache:
            self._cols = cols
            self._x_shape = x.shape
        y = np.matmul(self.w.reshape(self.out_channels, -1), cols)
        return y.reshape(x.shape[0], self.out_channels, ho, wo) + self.b[:, None, None]

    def backward(self, dy):
        n, o = dy.shape[0], dy.shape[1]
        dy_mat = dy.reshape(n, o, -1)
        self.db += dy_mat.sum(axis=(0, 2))
        # batched gemm against the transposed column view (no tensordot copies)
        self.dw += np.matmul(dy_mat, self._cols.transpose(0, 2, 1)).sum(axis=0) \
                     .reshape(self.w.shape)
        dcols = np.matmul(self.w.reshape(o, -1).T, dy_mat)
        return col2im(dcols, self._x_shape, self.kernel, self.stride, self.pad)


class ConvTranspose2d(Layer):
    """Transposed convolution, the exact adjoint of Conv2d with the same (k, s, p).

    Weight shape is (in_channels, out_channels, k, k); output spatial size is
    (H-1)*stride - 2*pad + k.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, rng=None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.w = kaiming_normal(rng, (in_channels, out_channels, kernel, kernel), fan_in)
        self.b = np.zeros(out_channels, dtype=DTYPE)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x_mat = None

    def param_items(self):
        return [("weight", self.w, self.dw), ("bias", self.b, self.db)]

    def out_shape(self, shape):
        c, h, w = shape
        k, s, p = self.kernel, self.stride, self.pad
        return (self.out_channels, (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k)

    def forward(self, x, cache=False):
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"ConvTranspose2d expected {self.in_channels} input channels, got {x.shape[1]}")
        n, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        x_mat = x.reshape(n, c, h * w)
        if cache:
            self._x_mat = x_mat
        dcols = np.matmul(self.w.reshape(c, -1).T, x_mat)
        y = col2im(dcols, (n, self.out_channels, ho, wo), self.kernel, self.stride, self.pad)
        return y + self.b[:, None, None]

    def backward(self, dy):
        cols, h, w = im2col(dy, self.kernel, self.stride, self.pad)
        n = dy.shape[0]
        self.db += dy.sum(axis=(0, 2, 3))
        self.dw += np.matmul(self._x_mat, cols.transpose(0, 2, 1)).sum(axis=0) \
                     .reshape(self.w.shape)
        dx = np.matmul(self.w.reshape(self.in_channels, -1), cols)
        return dx.reshape(n, self.in_channels, h, w)


class ReLU(Layer):
    def forward(self, x, cache=False):
        if cache:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dy):
        return dy * self._mask


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        self.slope = slope

    def forward(self, x, cache=False):
        if cache:
            self._mask = x > 0
        return np.where(x > 0, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.slope * dy)


def sigmoid(x):
    # split by sign to avoid overflowing exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sigmoid(Layer):
    def forward(self, x, cache=False):
        y = sigmoid(x)
        if cache:
            self._y = y
        return y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Clamp01(Layer):
    """Clamp to [0,1]; subgradient is zero outside the open interval."""

    def forward(self, x, cache=False):
        if cache:
            self._mask = (x > 0.0) & (x < 1.0)
        return np.clip(x, 0.0, 1.0)

    def backward(self, dy):
        return dy * self._mask


class ResnetBlock(Layer):
    """conv3x3 -> ReLU -> conv3x3 with identity skip; ReLU after the add."""

    def __init__(self, channels, rng=None):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, 1, 1, rng)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(channels, channels, 3, 1, 1, rng)

    def param_items(self):
        items = [("conv1." + n, w, g) for n, w, g in self.conv1.param_items()]
        items += [("conv2." + n, w, g) for n, w, g in self.conv2.param_items()]
        return items

    def out_shape(self, shape):
        return shape

    def forward(self, x, cache=False):
        h = self.conv1.forward(x, cache)
        h = self.relu1.forward(h, cache)
        h = self.conv2.forward(h, cache)
        s = x + h
        if cache:
            self._post_mask = s > 0
        return np.maximum(s, 0.0)

    def backward(self, dy):
        ds = dy * self._post_mask
        dx = self.conv1.backward(self.relu1.backward(self.conv2.backward(ds)))
        return dx + ds


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def param_items(self):
        items = []
        for i, layer in enumerate(self.layers):
            items += [(f"{i}.{n}", w, g) for n, w, g in layer.param_items()]
        return items

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def forward(self, x, cache=False):
        for layer in self.layers:
            x = layer.forward(x, cache)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def parameter_count(layer):
    return sum(int(w.size) for _, w, _ in layer.param_items())


def set_params(layer, arrays, prefix=""):
    """Copy arrays (a name -> ndarray mapping) into a layer's parameters."""
    for name, w, _ in layer.param_items():
        key = prefix + name
        if key not in arrays:
            raise KeyError(f"missing parameter '{key}'")
        src = arrays[key]
        if src.shape != w.shape:
            raise ValueError(f"shape mismatch for '{key}': {src.shape} vs {w.shape}")
        w[...] = src


def get_params(layer, prefix=""):
    return {prefix + name: w.copy() for name, w, _ in layer.param_items()}


class Adam:
    """Adam with bias correction. State round-trips exactly through

    :meth:`state_arrays` / :meth:`load_state_arrays` so checkpoint resume
    reproduces a straight run bit for bit.
    """

    def __init__(self, param_items, lr, betas=(0.9, 0.999), eps=1e-8):
        self.items = list(param_items)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(w) for name, w, _ in self.items}
        self.v = {name: np.zeros_like(w) for name, w, _ in self.items}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, w, g in self.items:
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix=""):
        out = {}
        for name in self.m:
            out[f"{prefix}m/{name}"] = self.m[name].copy()
            out[f"{prefix}v/{name}"] = self.v[name].copy()
        return out

    def load_state_arrays(self, arrays, t, prefix=""):
        self.t = int(t)
        for name in self.m:
            self.m[name][...] = arrays[f"{prefix}m/{name}"]
            self.v[name][...] = arrays[f"{prefix}v/{name}"]
