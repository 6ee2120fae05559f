"""Radial threat estimation for fiber-sensed energy pipelines.

Pipeline: synthetic multi-zone DAS signals -> VMD denoising -> space-time-
frequency feature fusion across adjacent defense zones -> compact SE/MBConv
classifier -> threat-area decision, with a training/evaluation harness for
the feature-variant ablation and transfer-learning comparison.
"""

__version__ = "0.1.0"

from .trace_io import (
    SampleRecord,
    ThreatClass,
    ZoneTrace,
    read_trace_file,
    split_dataset,
    write_trace_file,
)
from .simulate import ClassMap, EventSpec, synth_dataset, synth_event
from .vmd import VmdConfig, VmdResult, vmd_decompose, vmd_denoise
from .features import (
    FeatureConfig,
    FeatureVariant,
    FusedFeatureMap,
    SpectrogramTile,
    augment,
    make_features,
    stft_tile,
    stitch,
)
from .metrics import MetricsReport, evaluate
from .training import TrainConfig, ablation_run, lr_at, pretrain_then_finetune, train
