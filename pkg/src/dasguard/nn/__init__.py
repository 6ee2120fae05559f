from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    GlobalAvgPool,
    ReLU,
    RngSource,
    ShapeMismatchError,
    Sigmoid,
    SiLU,
    Tensor,
    cross_entropy,
    softmax,
)
from .blocks import FusedMBConv, MBConv, SEBlock
from .model import (
    LayerSpec,
    OpKind,
    ScalingCoefficients,
    ThreatNet,
    base_config,
    count_flops,
    count_params,
    load_checkpoint,
    round_channels,
    save_checkpoint,
    scale_architecture,
)
