"""From-scratch differentiable layers on channels-last (NHWC) numpy arrays.

Every layer implements forward(x, training) and backward(dout); backward
returns the input gradient and fills the .grad buffers of the layer's
parameters. Convolutions run as one GEMM per kernel tap over strided slices
of the padded input; the input gradient scatter-adds through the same taps,
avoiding large im2col gathers.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Value plus optional gradient buffer; the network's parameter currency."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size


class ShapeMismatchError(ValueError):
    pass


def _require_channels(x, expected, who):
    if x.shape[-1] != expected:
        raise ShapeMismatchError(f"{who}: expected {expected} channels, input has shape {x.shape}")


def same_pad(in_size: int, kernel: int, stride: int):
    """Output size and (before, after) padding for SAME semantics."""
    out = -(-in_size // stride)
    total = max((out - 1) * stride + kernel - in_size, 0)
    return out, total // 2, total - total // 2


class Layer:
    """Minimal layer protocol; subclasses fill params/forward/backward."""

    def named_params(self):
        return []

    def named_buffers(self):
        return []

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


def _tap_slice(xp, u, v, oh, ow, stride):
    """Strided view of the padded input seen by kernel tap (u, v)."""
    return xp[:, u : u + (oh - 1) * stride + 1 : stride, v : v + (ow - 1) * stride + 1 : stride, :]


def _pad_same(x, k, pt, pl):
    b, h, w, c = x.shape
    xp = np.zeros((b, h + k - 1, w + k - 1, c), dtype=x.dtype)
    xp[:, pt : pt + h, pl : pl + w] = x
    return xp


def _gather_taps(xp, k, stride, oh, ow):
    """Tap-major column stack: (k*k, B*oh*ow, C) copies of the tap slices."""
    b = xp.shape[0]
    c = xp.shape[3]
    cols = np.empty((k * k, b * oh * ow, c), dtype=xp.dtype)
    t = 0
    for u in range(k):
        for v in range(k):
            cols[t] = _tap_slice(xp, u, v, oh, ow, stride).reshape(b * oh * ow, c)
            t += 1
    return cols


class Conv2d(Layer):
    """SAME-padded 2-D convolution, no bias (batch norm follows everywhere).

    Runs as one batched GEMM over a tap-major column stack; the input
    gradient scatter-adds each tap's contribution back through the padding.
    """

    def __init__(self, c_in, c_out, kernel=3, stride=1, rng=None, dtype=np.float32):
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (kernel * kernel * c_in))
        self.weight = Tensor(
            rng.normal(0.0, scale, (kernel, kernel, c_in, c_out)).astype(dtype),
            requires_grad=True,
        )
        self._cache = None

    def named_params(self):
        return [("weight", self.weight)]

    def forward(self, x, training=False):
        _require_channels(x, self.c_in, "Conv2d")
        k, s = self.kernel, self.stride
        b, h, w, _ = x.shape
        if k == 1 and s == 1:
            w2d = self.weight.data.reshape(self.c_in, self.c_out)
            y = (x.reshape(-1, self.c_in) @ w2d).reshape(b, h, w, self.c_out)
            if training:
                self._cache = ("flat", x.shape, x.reshape(-1, self.c_in))
            return y
        oh, pt, _ = same_pad(h, k, s)
        ow, pl, _ = same_pad(w, k, s)
        xp = _pad_same(x, k, pt, pl) if k > 1 else x
        cols = _gather_taps(xp, k, s, oh, ow)
        w_taps = self.weight.data.reshape(k * k, self.c_in, self.c_out)
        y = np.matmul(cols, w_taps).sum(axis=0)
        if training:
            self._cache = ("taps", x.shape, cols, (oh, ow, pt, pl))
        return y.reshape(b, oh, ow, self.c_out)

    def backward(self, dout):
        kind, x_shape, *rest = self._cache
        self._cache = None
        k, s = self.kernel, self.stride
        if kind == "flat":
            x2d = rest[0]
            d2d = dout.reshape(-1, self.c_out)
            self.weight.grad = (x2d.T @ d2d).reshape(self.weight.shape)
            return (d2d @ self.weight.data.reshape(self.c_in, self.c_out).T).reshape(x_shape)
        cols, (oh, ow, pt, pl) = rest
        b, h, w, _ = x_shape
        d2d = dout.reshape(b * oh * ow, self.c_out)
        w_taps = self.weight.data.reshape(k * k, self.c_in, self.c_out)
        self.weight.grad = np.matmul(cols.transpose(0, 2, 1), d2d).reshape(self.weight.shape)
        dtaps = np.matmul(d2d, w_taps.transpose(0, 2, 1))  # (k*k, N, c_in)
        dxp = np.zeros((b, h + k - 1, w + k - 1, self.c_in), dtype=dout.dtype)
        t = 0
        for u in range(k):
            for v in range(k):
                _tap_slice(dxp, u, v, oh, ow, s)[...] += dtaps[t].reshape(b, oh, ow, self.c_in)
                t += 1
        return dxp[:, pt : pt + h, pl : pl + w]


class DepthwiseConv2d(Layer):
    """Per-channel SAME-padded 3x3 (or kxk) convolution."""

    def __init__(self, channels, kernel=3, stride=1, rng=None, dtype=np.float32):
        self.channels, self.kernel, self.stride = channels, kernel, stride
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (kernel * kernel))
        self.weight = Tensor(
            rng.normal(0.0, scale, (kernel, kernel, channels)).astype(dtype),
            requires_grad=True,
        )
        self._cache = None

    def named_params(self):
        return [("weight", self.weight)]

    def forward(self, x, training=False):
        _require_channels(x, self.channels, "DepthwiseConv2d")
        k, s = self.kernel, self.stride
        b, h, w, c = x.shape
        oh, pt, _ = same_pad(h, k, s)
        ow, pl, _ = same_pad(w, k, s)
        xp = _pad_same(x, k, pt, pl) if k > 1 else x
        cols = _gather_taps(xp, k, s, oh, ow)
        w_taps = self.weight.data.reshape(k * k, c)
        y = np.einsum("tnc,tc->nc", cols, w_taps, optimize=False)
        if training:
            self._cache = (x.shape, cols, (oh, ow, pt, pl))
        return y.reshape(b, oh, ow, c)

    def backward(self, dout):
        x_shape, cols, (oh, ow, pt, pl) = self._cache
        self._cache = None
        k, s = self.kernel, self.stride
        b, h, w, c = x_shape
        d2d = dout.reshape(-1, c)
        self.weight.grad = np.einsum("tnc,nc->tc", cols, d2d, optimize=False).reshape(
            self.weight.shape
        )
        w_taps = self.weight.data.reshape(k * k, 1, c)
        dtaps = d2d[None, :, :] * w_taps
        dxp = np.zeros((b, h + k - 1, w + k - 1, c), dtype=dout.dtype)
        t = 0
        for u in range(k):
            for v in range(k):
                _tap_slice(dxp, u, v, oh, ow, s)[...] += dtaps[t].reshape(b, oh, ow, c)
                t += 1
        return dxp[:, pt : pt + h, pl : pl + w]


class BatchNorm(Layer):
    """Per-channel batch normalization with running statistics for inference."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def named_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def named_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, training=False):
        _require_channels(x, self.channels, "BatchNorm")
        if training:
            x2 = x.reshape(-1, self.channels)
            n = x2.shape[0]
            mu = x2.mean(axis=0)
            sq = np.einsum("nc,nc->c", x2, x2, optimize=False) / n
            var = np.maximum(sq - mu * mu, 0.0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mu).astype(x.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(x.dtype)
            self._cache = (xhat, inv_std, n)
            return xhat * self.gamma.data + self.beta.data
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        return (x - self.running_mean) * (self.gamma.data * inv_std) + self.beta.data

    def backward(self, dout):
        xhat, inv_std, n = self._cache
        self._cache = None
        d2 = dout.reshape(-1, self.channels)
        xhat2 = xhat.reshape(-1, self.channels)
        dgamma = np.einsum("nc,nc->c", d2, xhat2, optimize=False)
        dbeta = d2.sum(axis=0)
        self.gamma.grad = dgamma
        self.beta.grad = dbeta
        # dx = gamma*inv_std * (dout - (dbeta + xhat*dgamma)/n); the sums of
        # dout*gamma reduce to gamma*dbeta and gamma*dgamma, so two reductions suffice
        dx = xhat * (dgamma / n)
        dx += dbeta / n
        np.subtract(dout, dx, out=dx)
        dx *= self.gamma.data * inv_std
        return dx


class SiLU(Layer):
    def forward(self, x, training=False):
        # exp may overflow to inf for very negative float32 inputs; the
        # resulting gate is a correct 0, so silence the spurious warning
        with np.errstate(over="ignore"):
            sig = 1.0 / (1.0 + np.exp(-x))
        if training:
            self._cache = (x, sig)
        return x * sig

    def backward(self, dout):
        x, sig = self._cache
        self._cache = None
        d = 1.0 - sig
        d *= x
        d += 1.0
        d *= sig
        d *= dout
        return d


class ReLU(Layer):
    def forward(self, x, training=False):
        if training:
            self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        mask = self._cache
        self._cache = None
        return dout * mask


class Sigmoid(Layer):
    def forward(self, x, training=False):
        with np.errstate(over="ignore"):
            y = 1.0 / (1.0 + np.exp(-x))
        if training:
            self._cache = y
        return y

    def backward(self, dout):
        y = self._cache
        self._cache = None
        return dout * y * (1.0 - y)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / n_in)
        self.weight = Tensor(rng.normal(0.0, scale, (n_in, n_out)).astype(dtype), True)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), True)
        self.n_in, self.n_out = n_in, n_out
        self._cache = None

    def named_params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x, training=False):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatchError(f"Dense: expected {self.n_in} inputs, got shape {x.shape}")
        if training:
            self._cache = x
        return x @ self.weight.data + self.bias.data

    def backward(self, dout):
        x = self._cache
        self._cache = None
        self.weight.grad = x.T @ dout
        self.bias.grad = dout.sum(axis=0)
        return dout @ self.weight.data.T


class GlobalAvgPool(Layer):
    """Spatial mean over H and W: (B, H, W, C) -> (B, C)."""

    def forward(self, x, training=False):
        if training:
            self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        b, h, w, c = self._cache
        self._cache = None
        return np.broadcast_to(dout[:, None, None, :] / (h * w), (b, h, w, c)).copy()


class RngSource:
    """Shared, reseedable randomness handle for dropout layers."""

    def __init__(self, seed=0):
        self.generator = np.random.default_rng(seed)

    def reseed(self, seed):
        self.generator = np.random.default_rng(seed)


class Dropout(Layer):
    """Inverted dropout; identity in inference mode."""

    def __init__(self, rate, rng_source: RngSource):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng_source = rng_source
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        mask = self.rng_source.generator.random(x.shape, dtype=np.float32) < keep
        mask = mask.astype(x.dtype)
        mask /= keep
        self._mask = mask
        return x * mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        mask = self._mask
        self._mask = None
        return dout * mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    probs = softmax(logits)
    n = logits.shape[0]
    eps = np.finfo(probs.dtype).tiny
    loss = float(-np.log(probs[np.arange(n), labels] + eps).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n
