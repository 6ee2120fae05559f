"""Inverted-bottleneck blocks with channel attention.

The SE block squeezes each channel to its spatial mean, passes the vector
through two dense maps (ReLU then sigmoid), and rescales the channels by the
resulting gates. MBConv wraps expand / depthwise / SE / project; Fused-MBConv
replaces the expand+depthwise pair with a single 3x3 convolution.
"""

from __future__ import annotations

import numpy as np

from .layers import (
    BatchNorm,
    Conv2d,
    DepthwiseConv2d,
    Dropout,
    Layer,
    ReLU,
    RngSource,
    ShapeMismatchError,
    Sigmoid,
    SiLU,
    Tensor,
)


class SEBlock(Layer):
    """Squeeze-and-excitation channel gating: x_c -> s_c * x_c, s in (0,1)."""

    def __init__(self, channels, reduced, rng=None, dtype=np.float32):
        if reduced < 1:
            raise ValueError("reduced channel count must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.reduced = reduced
        self.w1 = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / channels), (channels, reduced)).astype(dtype), True
        )
        self.w2 = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / reduced), (reduced, channels)).astype(dtype), True
        )
        self._cache = None

    def named_params(self):
        return [("w1", self.w1), ("w2", self.w2)]

    def forward(self, x, training=False):
        if x.shape[-1] != self.channels:
            raise ShapeMismatchError(
                f"SEBlock: expected {self.channels} channels, input has shape {x.shape}"
            )
        z = x.mean(axis=(1, 2))                      # squeeze: (B, C)
        a = z @ self.w1.data
        relu_a = np.maximum(a, 0)
        s = 1.0 / (1.0 + np.exp(-(relu_a @ self.w2.data)))  # gates in (0, 1)
        y = x * s[:, None, None, :]
        if training:
            self._cache = (x, z, a, relu_a, s)
        return y

    def backward(self, dout):
        x, z, a, relu_a, s = self._cache
        self._cache = None
        b, h, w, c = x.shape
        dx = dout * s[:, None, None, :]
        ds = (dout * x).sum(axis=(1, 2))             # (B, C)
        dpre2 = ds * s * (1.0 - s)
        self.w2.grad = relu_a.T @ dpre2
        drelu = dpre2 @ self.w2.data.T
        da = drelu * (a > 0)
        self.w1.grad = z.T @ da
        dz = da @ self.w1.data.T
        dx += dz[:, None, None, :] / (h * w)
        return dx


class _ConvBnAct:
    """conv -> BN -> optional SiLU, as one forward/backward unit."""

    def __init__(self, conv, bn, act):
        self.conv, self.bn, self.act = conv, bn, act

    def forward(self, x, training):
        y = self.conv.forward(x, training)
        y = self.bn.forward(y, training)
        if self.act is not None:
            y = self.act.forward(y, training)
        return y

    def backward(self, dout):
        if self.act is not None:
            dout = self.act.backward(dout)
        dout = self.bn.backward(dout)
        return self.conv.backward(dout)


class FusedMBConv(Layer):
    """3x3 fused inverted bottleneck.

    expansion == 1: [3x3 conv -> BN -> SiLU -> dropout]
    expansion  > 1: [3x3 expand -> BN -> SiLU -> 1x1 project -> BN -> dropout]
    Residual skip when stride == 1 and channel counts match.
    """

    def __init__(self, c_in, c_out, expansion=1, stride=1, dropout=0.0,
                 rng=None, rng_source=None, bn_eps=1e-5, dtype=np.float32):
        if expansion < 1:
            raise ValueError("expansion must be >= 1")
        rng = rng or np.random.default_rng(0)
        rng_source = rng_source or RngSource(0)
        self.c_in, self.c_out, self.expansion, self.stride = c_in, c_out, expansion, stride
        self.use_skip = stride == 1 and c_in == c_out
        if expansion == 1:
            self.main = _ConvBnAct(
                Conv2d(c_in, c_out, 3, stride, rng, dtype),
                BatchNorm(c_out, eps=bn_eps, dtype=dtype),
                SiLU(),
            )
            self.project = None
        else:
            mid = c_in * expansion
            self.main = _ConvBnAct(
                Conv2d(c_in, mid, 3, stride, rng, dtype),
                BatchNorm(mid, eps=bn_eps, dtype=dtype),
                SiLU(),
            )
            self.project = _ConvBnAct(
                Conv2d(mid, c_out, 1, 1, rng, dtype),
                BatchNorm(c_out, eps=bn_eps, dtype=dtype),
                None,
            )
        self.drop = Dropout(dropout, rng_source)

    def named_params(self):
        parts = [("conv1", self.main.conv), ("bn1", self.main.bn)]
        if self.project is not None:
            parts += [("conv2", self.project.conv), ("bn2", self.project.bn)]
        out = []
        for prefix, layer in parts:
            out += [(f"{prefix}.{n}", p) for n, p in layer.named_params()]
        return out

    def named_buffers(self):
        parts = [("bn1", self.main.bn)]
        if self.project is not None:
            parts.append(("bn2", self.project.bn))
        out = []
        for prefix, layer in parts:
            out += [(f"{prefix}.{n}", b) for n, b in layer.named_buffers()]
        return out

    def forward(self, x, training=False):
        y = self.main.forward(x, training)
        if self.project is not None:
            y = self.project.forward(y, training)
        y = self.drop.forward(y, training)
        return y + x if self.use_skip else y

    def backward(self, dout):
        d = self.drop.backward(dout)
        if self.project is not None:
            d = self.project.backward(d)
        dx = self.main.backward(d)
        if self.use_skip:
            dx = dx + dout
        return dx


class MBConv(Layer):
    """1x1 expand -> depthwise 3x3 -> SE -> 1x1 project, with residual skip."""

    def __init__(self, c_in, c_out, expansion=4, stride=1, se_ratio=0.25, dropout=0.0,
                 rng=None, rng_source=None, bn_eps=1e-5, dtype=np.float32):
        if expansion < 1:
            raise ValueError("expansion must be >= 1")
        if not 0 < se_ratio <= 1:
            raise ValueError("MBConv requires se_ratio in (0, 1]")
        rng = rng or np.random.default_rng(0)
        rng_source = rng_source or RngSource(0)
        self.c_in, self.c_out, self.expansion, self.stride = c_in, c_out, expansion, stride
        self.use_skip = stride == 1 and c_in == c_out
        mid = c_in * expansion
        self.expand = _ConvBnAct(
            Conv2d(c_in, mid, 1, 1, rng, dtype),
            BatchNorm(mid, eps=bn_eps, dtype=dtype),
            SiLU(),
        )
        self.depthwise = _ConvBnAct(
            DepthwiseConv2d(mid, 3, stride, rng, dtype),
            BatchNorm(mid, eps=bn_eps, dtype=dtype),
            SiLU(),
        )
        self.se = SEBlock(mid, max(1, round(mid * se_ratio)), rng, dtype)
        self.project = _ConvBnAct(
            Conv2d(mid, c_out, 1, 1, rng, dtype),
            BatchNorm(c_out, eps=bn_eps, dtype=dtype),
            None,
        )
        self.drop = Dropout(dropout, rng_source)

    def named_params(self):
        parts = [
            ("conv_expand", self.expand.conv),
            ("bn_expand", self.expand.bn),
            ("conv_dw", self.depthwise.conv),
            ("bn_dw", self.depthwise.bn),
            ("conv_project", self.project.conv),
            ("bn_project", self.project.bn),
        ]
        out = []
        for prefix, layer in parts:
            out += [(f"{prefix}.{n}", p) for n, p in layer.named_params()]
        if self.se is not None:
            out += [(f"se.{n}", p) for n, p in self.se.named_params()]
        return out

    def named_buffers(self):
        parts = [("bn_expand", self.expand.bn), ("bn_dw", self.depthwise.bn),
                 ("bn_project", self.project.bn)]
        out = []
        for prefix, layer in parts:
            out += [(f"{prefix}.{n}", b) for n, b in layer.named_buffers()]
        return out

    def forward(self, x, training=False):
        y = self.expand.forward(x, training)
        y = self.depthwise.forward(y, training)
        if self.se is not None:
            y = self.se.forward(y, training)
        y = self.project.forward(y, training)
        y = self.drop.forward(y, training)
        return y + x if self.use_skip else y

    def backward(self, dout):
        d = self.drop.backward(dout)
        d = self.project.backward(d)
        if self.se is not None:
            d = self.se.backward(d)
        d = self.depthwise.backward(d)
        dx = self.expand.backward(d)
        if self.use_skip:
            dx = dx + dout
        return dx
