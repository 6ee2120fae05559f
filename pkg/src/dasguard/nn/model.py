"""Classifier assembly: stage specs, compound scaling, and checkpoint I/O.

The architecture is a compact EfficientNetV2-style stack: a strided stem,
fused inverted-bottleneck stages, SE-gated MBConv stages, then a 1x1 head,
global pooling, and a dense classifier. Compound scaling multiplies stage
repeats by d (ceil), channels by w (rounded to a multiple of 4), and the
input resolution by r.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .blocks import FusedMBConv, MBConv
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    GlobalAvgPool,
    RngSource,
    ShapeMismatchError,
    SiLU,
    Tensor,
    same_pad,
    softmax,
)

CHECKPOINT_MAGIC = b"DASM"
CHECKPOINT_VERSION = 1


class OpKind(str, Enum):
    STEM = "stem"
    FUSED_MBCONV = "fused_mbconv"
    MBCONV = "mbconv"
    HEAD = "head"


@dataclass
class LayerSpec:
    """One stage of the network: a block type repeated `repeats` times."""

    op_kind: OpKind
    repeats: int = 1
    channels: int = 16
    stride: int = 1
    expansion: int = 1
    se_ratio: float = 0.0

    def __post_init__(self):
        self.op_kind = OpKind(self.op_kind)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.op_kind is OpKind.MBCONV and self.se_ratio <= 0:
            raise ValueError("MBConv stages require se_ratio > 0")
        if self.op_kind is OpKind.FUSED_MBCONV and self.se_ratio != 0:
            raise ValueError("Fused-MBConv stages must have se_ratio = 0")


@dataclass
class ScalingCoefficients:
    """Depth/width/resolution multipliers, all >= 1 (scaling up only)."""

    depth: float = 1.0
    width: float = 1.0
    resolution: float = 1.0

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.resolution < 1:
            raise ValueError("scaling coefficients must all be >= 1")


def base_config():
    """Default compact architecture (about 1.8e5 parameters at 96x96)."""
    return [
        LayerSpec(OpKind.STEM, 1, 8, 2),
        LayerSpec(OpKind.FUSED_MBCONV, 4, 8, 2, 1, 0.0),
        LayerSpec(OpKind.FUSED_MBCONV, 4, 16, 2, 4, 0.0),
        LayerSpec(OpKind.MBCONV, 4, 24, 2, 4, 0.25),
        LayerSpec(OpKind.MBCONV, 4, 40, 1, 4, 0.25),
        LayerSpec(OpKind.HEAD, 1, 128, 1),
    ]


def round_channels(value: float) -> int:
    """Round to a multiple of 4 so depthwise groups and SE reductions stay integral."""
    return max(4, 4 * round(value / 4))


def scale_architecture(base, input_res: int, coeffs: ScalingCoefficients):
    """Apply compound scaling; returns (scaled specs, scaled resolution)."""
    scaled = []
    for spec in base:
        repeats = spec.repeats
        if spec.op_kind in (OpKind.FUSED_MBCONV, OpKind.MBCONV):
            repeats = math.ceil(coeffs.depth * spec.repeats)
        scaled.append(
            LayerSpec(
                spec.op_kind,
                repeats,
                round_channels(coeffs.width * spec.channels),
                spec.stride,
                spec.expansion,
                spec.se_ratio,
            )
        )
    return scaled, round(coeffs.resolution * input_res)


def _stage_blocks(spec: LayerSpec, c_in: int):
    """Yield (c_in, c_out, stride) for each block in a stage."""
    for i in range(spec.repeats):
        yield (c_in if i == 0 else spec.channels, spec.channels, spec.stride if i == 0 else 1)


def count_params(specs, in_channels: int = 1, n_classes: int = 3) -> int:
    """Closed-form parameter count (weights + BN affine + SE + head)."""
    total = 0
    c_prev = in_channels
    for spec in specs:
        if spec.op_kind is OpKind.STEM:
            total += 9 * c_prev * spec.channels + 2 * spec.channels
            c_prev = spec.channels
        elif spec.op_kind is OpKind.HEAD:
            total += c_prev * spec.channels + 2 * spec.channels
            total += spec.channels * n_classes + n_classes
            c_prev = spec.channels
        else:
            for c_in, c_out, _ in _stage_blocks(spec, c_prev):
                mid = c_in * spec.expansion
                if spec.op_kind is OpKind.FUSED_MBCONV:
                    if spec.expansion == 1:
                        total += 9 * c_in * c_out + 2 * c_out
                    else:
                        total += 9 * c_in * mid + 2 * mid
                        total += mid * c_out + 2 * c_out
                else:
                    total += c_in * mid + 2 * mid          # expand
                    total += 9 * mid + 2 * mid             # depthwise
                    red = max(1, round(mid * spec.se_ratio))
                    total += mid * red + red * mid         # SE dense maps
                    total += mid * c_out + 2 * c_out       # project
            c_prev = spec.channels
    return total


def count_flops(specs, input_res: int, in_channels: int = 1, n_classes: int = 3) -> int:
    """Multiply-accumulate count x2 for convolutions and dense layers."""
    total = 0
    res = input_res
    c_prev = in_channels
    for spec in specs:
        if spec.op_kind is OpKind.STEM:
            res, _, _ = same_pad(res, 3, spec.stride)
            total += res * res * 9 * c_prev * spec.channels * 2
            c_prev = spec.channels
        elif spec.op_kind is OpKind.HEAD:
            total += res * res * c_prev * spec.channels * 2
            total += spec.channels * n_classes * 2
            c_prev = spec.channels
        else:
            for c_in, c_out, stride in _stage_blocks(spec, c_prev):
                mid = c_in * spec.expansion
                out_res, _, _ = same_pad(res, 3, stride)
                if spec.op_kind is OpKind.FUSED_MBCONV:
                    if spec.expansion == 1:
                        total += out_res * out_res * 9 * c_in * c_out * 2
                    else:
                        total += out_res * out_res * 9 * c_in * mid * 2
                        total += out_res * out_res * mid * c_out * 2
                else:
                    total += res * res * c_in * mid * 2
                    total += out_res * out_res * 9 * mid * 2
                    red = max(1, round(mid * spec.se_ratio))
                    total += 2 * mid * red * 2
                    total += out_res * out_res * mid * c_out * 2
                res = out_res
            c_prev = spec.channels
    return total


class ThreatNet:
    """The radial-threat classifier: stem -> fused stages -> SE stages -> head.

    A horizontal coordinate ramp is appended as an input channel so that
    zone position inside the stitched feature map survives global pooling:
    channels can then encode per-zone statistics rather than only
    translation-invariant texture.
    """

    def __init__(self, specs=None, input_res: int = 96, n_classes: int = 3,
                 in_channels: int = 1, dropout: float = 0.1, seed: int = 0,
                 coord_channel: bool = True, bn_eps: float = 1e-5, dtype=np.float32):
        self.specs = list(specs) if specs is not None else base_config()
        self.input_res = input_res
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.coord_channel = coord_channel
        self.dropout = dropout
        self.dtype = dtype
        self.rng_source = RngSource(seed)
        rng = np.random.default_rng([seed, 1])

        self.blocks = []           # (name, layer) in forward order
        c_prev = self.stem_in_channels
        stage_idx = 0
        for spec in self.specs:
            if spec.op_kind is OpKind.STEM:
                self.blocks.append(("stem.conv", Conv2d(c_prev, spec.channels, 3, spec.stride, rng, dtype)))
                self.blocks.append(("stem.bn", BatchNorm(spec.channels, eps=bn_eps, dtype=dtype)))
                self.blocks.append(("stem.act", SiLU()))
                c_prev = spec.channels
            elif spec.op_kind is OpKind.HEAD:
                self.blocks.append(("head.conv", Conv2d(c_prev, spec.channels, 1, 1, rng, dtype)))
                self.blocks.append(("head.bn", BatchNorm(spec.channels, eps=bn_eps, dtype=dtype)))
                self.blocks.append(("head.act", SiLU()))
                self.blocks.append(("head.pool", GlobalAvgPool()))
                self.head_dense = Dense(spec.channels, n_classes, rng, dtype)
                self.blocks.append(("head.dense", self.head_dense))
                c_prev = spec.channels
            else:
                for i, (c_in, c_out, stride) in enumerate(_stage_blocks(spec, c_prev)):
                    name = f"stage{stage_idx}.block{i}"
                    if spec.op_kind is OpKind.FUSED_MBCONV:
                        layer = FusedMBConv(c_in, c_out, spec.expansion, stride, dropout,
                                            rng, self.rng_source, bn_eps, dtype)
                    else:
                        layer = MBConv(c_in, c_out, spec.expansion, stride, spec.se_ratio,
                                       dropout, rng, self.rng_source, bn_eps, dtype)
                    self.blocks.append((name, layer))
                c_prev = spec.channels
                stage_idx += 1

    @property
    def stem_in_channels(self) -> int:
        return self.in_channels + (1 if self.coord_channel else 0)

    def forward(self, x, training: bool = False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[..., None]
        if x.shape[1] != self.input_res or x.shape[2] != self.input_res:
            raise ShapeMismatchError(
                f"expected input resolution {self.input_res}x{self.input_res}, "
                f"got {x.shape[1]}x{x.shape[2]}"
            )
        if self.coord_channel:
            b, h, w, _ = x.shape
            ramp = np.linspace(-1.0, 1.0, w, dtype=self.dtype)
            coord = np.broadcast_to(ramp[None, None, :, None], (b, h, w, 1))
            x = np.concatenate([x, coord], axis=3)
        for _, layer in self.blocks:
            x = layer.forward(x, training)
        return x

    def backward(self, dlogits):
        d = dlogits
        for _, layer in reversed(self.blocks):
            d = layer.backward(d)
        return d

    def predict_proba(self, x, batch_size: int = 64):
        out = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start : start + batch_size], training=False)
            out.append(softmax(logits))
        return np.concatenate(out, axis=0)

    def predict(self, x, batch_size: int = 64):
        return self.predict_proba(x, batch_size).argmax(axis=1)

    def named_params(self):
        out = []
        for name, layer in self.blocks:
            if hasattr(layer, "named_params"):
                out += [(f"{name}.{n}", p) for n, p in layer.named_params()]
        return out

    def named_buffers(self):
        out = []
        for name, layer in self.blocks:
            if hasattr(layer, "named_buffers"):
                out += [(f"{name}.{n}", b) for n, b in layer.named_buffers()]
        return out

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_params())

    def reinit_head(self, n_classes: int, seed: int = 0) -> None:
        """Replace the classifier head; used when transferring a trunk."""
        rng = np.random.default_rng([seed, 2])
        self.head_dense.__init__(self.head_dense.n_in, n_classes, rng, self.dtype)
        self.n_classes = n_classes

    def state_arrays(self):
        """Parameters then buffers, each as (name, ndarray)."""
        items = [(n, p.data) for n, p in self.named_params()]
        items += [(n, b) for n, b in self.named_buffers()]
        return items

    def load_state_arrays(self, arrays: dict) -> None:
        for name, param in self.named_params():
            if name not in arrays:
                raise ValueError(f"checkpoint missing parameter {name}")
            value = arrays[name]
            if tuple(value.shape) != tuple(param.shape):
                raise ValueError(
                    f"parameter {name}: checkpoint shape {value.shape} != model {param.shape}"
                )
            param.data = value.astype(self.dtype)
        buffer_owners = {}
        for bname, layer in self.blocks:
            if hasattr(layer, "named_buffers"):
                buffer_owners[bname] = layer
        for name, _ in self.named_buffers():
            if name not in arrays:
                raise ValueError(f"checkpoint missing buffer {name}")
        for bname, layer in self.blocks:
            self._load_layer_buffers(bname, layer, arrays)

    def _load_layer_buffers(self, bname, layer, arrays):
        if isinstance(layer, BatchNorm):
            layer.running_mean = arrays[f"{bname}.running_mean"].astype(self.dtype)
            layer.running_var = arrays[f"{bname}.running_var"].astype(self.dtype)
            return
        for attr in ("main", "project", "expand", "depthwise"):
            sub = getattr(layer, attr, None)
            if sub is not None and hasattr(sub, "bn"):
                prefix = {"main": "bn1", "project": "bn2"}.get(attr)
                if isinstance(layer, MBConv):
                    prefix = {"expand": "bn_expand", "depthwise": "bn_dw", "project": "bn_project"}[attr]
                if prefix is None:
                    continue
                sub.bn.running_mean = arrays[f"{bname}.{prefix}.running_mean"].astype(self.dtype)
                sub.bn.running_var = arrays[f"{bname}.{prefix}.running_var"].astype(self.dtype)


def _spec_to_dict(spec: LayerSpec) -> dict:
    d = asdict(spec)
    d["op_kind"] = spec.op_kind.value
    return d


def save_checkpoint(model: ThreatNet, path, scaling: ScalingCoefficients | None = None,
                    feature_meta: dict | None = None) -> None:
    """Write architecture description plus named f32 arrays, little-endian."""
    desc = {
        "specs": [_spec_to_dict(s) for s in model.specs],
        "input_resolution": model.input_res,
        "class_count": model.n_classes,
        "in_channels": model.in_channels,
        "coord_channel": model.coord_channel,
        "dropout": model.dropout,
        "scaling": asdict(scaling) if scaling else None,
        "feature": feature_meta or {},
    }
    blob = json.dumps(desc).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        arrays = model.state_arrays()
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32):
    """Rebuild the model from a checkpoint; returns (model, description dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<H", buf.read(2))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (desc_len,) = struct.unpack("<I", buf.read(4))
    desc = json.loads(buf.read(desc_len).decode("utf-8"))
    (n_arrays,) = struct.unpack("<I", buf.read(4))
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape)
        arrays[name] = arr.copy()

    specs = [LayerSpec(**d) for d in desc["specs"]]
    model = ThreatNet(
        specs,
        input_res=desc["input_resolution"],
        n_classes=desc["class_count"],
        in_channels=desc.get("in_channels", 1),
        coord_channel=desc.get("coord_channel", True),
        dropout=desc.get("dropout", 0.1),
        dtype=dtype,
    )
    model.load_state_arrays(arrays)
    return model, desc
