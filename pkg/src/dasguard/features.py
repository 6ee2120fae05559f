"""Feature construction: time-frequency tiles, three-zone stitching, variants.

The fused feature places the spectrograms of zones i-1, i, i+1 side by side,
so the spatial attenuation profile across zones becomes image structure a
convolutional classifier can read. The other variants exist for the method
ablation: raw waveform, time-domain summary, and single-zone spectrogram.
All variants emit one (out_h, out_w) grid with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .trace_io import SAMPLE_RATE_HZ, ZONES_PER_RECORD, SampleRecord, ZoneTrace
from .vmd import VmdConfig, mode_correlations, vmd_decompose_stack


class FeatureVariant(str, Enum):
    RAW = "raw"
    TF = "tf"
    TFF = "tff"
    STFF = "stff"
    STFF_AUG = "stff_aug"

    @classmethod
    def parse(cls, name: str) -> "FeatureVariant":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown feature variant {name!r}") from None


@dataclass
class FeatureConfig:
    window: int = 256
    hop: int = 64
    out_h: int = 96
    out_w: int = 96
    vmd: VmdConfig = field(default_factory=VmdConfig)

    def __post_init__(self):
        if self.window < 2 or self.window & (self.window - 1):
            raise ValueError(f"window must be a power of two, got {self.window}")
        if not 1 <= self.hop <= self.window:
            raise ValueError("hop must be in [1, window]")


@dataclass
class SpectrogramTile:
    """Normalized log-magnitude time-frequency grid for one zone."""

    values: np.ndarray           # (freq_bins, frames) in [0, 1]
    zone_index: int
    freq_resolution_hz: float
    time_resolution_s: float


@dataclass
class FusedFeatureMap:
    values: np.ndarray           # (out_h, out_w) in [0, 1]
    source_zones: tuple


def _frame(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Non-padded sliding frames: (n_frames, window) view."""
    n = (len(x) - window) // hop + 1
    if n < 1:
        raise ValueError(f"signal of {len(x)} samples is shorter than window {window}")
    stride = x.strides[0]
    return np.lib.stride_tricks.as_strided(
        x, (n, window), (hop * stride, stride), writeable=False
    )


def stft_magnitude(x, window: int, hop: int):
    """Hann-windowed magnitude STFT of the interior frames: (bins, frames)."""
    x = np.asarray(x, dtype=np.float64)
    frames = _frame(x, window, hop)
    hann = np.hanning(window + 1)[:-1]
    spec = np.fft.rfft(frames * hann, axis=1)
    return np.abs(spec).T


def minmax_normalize(grid: np.ndarray) -> np.ndarray:
    """Map to [0, 1]; an all-equal grid maps to zeros."""
    lo = grid.min()
    hi = grid.max()
    if hi == lo:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def stft_tile(trace: ZoneTrace, window: int = 256, hop: int = 64) -> SpectrogramTile:
    """Log-magnitude spectrogram of one zone, min-max normalized per tile."""
    mag = stft_magnitude(trace.samples, window, hop)
    values = minmax_normalize(np.log1p(mag))
    return SpectrogramTile(
        values=values,
        zone_index=trace.zone_index,
        freq_resolution_hz=trace.sample_rate_hz / window,
        time_resolution_s=hop / trace.sample_rate_hz,
    )


def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Triangle-filter resampling matrix with half-pixel centers.

    On upscale this is classic two-point bilinear; on downscale the filter
    support widens with the scale factor (antialiased bilinear, as image
    libraries implement it), so every source column contributes instead of
    being subsampled. Rows sum to 1, so constant grids are preserved.
    """
    scale = n_in / n_out
    support = max(scale, 1.0)
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    offsets = np.arange(-int(np.ceil(support)), int(np.ceil(support)) + 1)
    idx = np.floor(src)[:, None] + offsets[None, :]
    weights = np.maximum(0.0, 1.0 - np.abs(idx - src[:, None]) / support)
    idx = np.clip(idx, 0, n_in - 1).astype(int)
    dense = np.zeros((n_out, n_in))
    np.add.at(dense, (np.repeat(np.arange(n_out), idx.shape[1]), idx.ravel()), weights.ravel())
    return dense / dense.sum(axis=1, keepdims=True)


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize (antialiased on downscale); exact on constants."""
    wr = _resize_weights(grid.shape[0], out_h)
    wc = _resize_weights(grid.shape[1], out_w)
    return wr @ grid @ wc.T


def stitch(tiles, out_h: int, out_w: int) -> FusedFeatureMap:
    """Concatenate three same-shape tiles left-to-right, then resize."""
    if len(tiles) != 3:
        raise ValueError(f"need exactly 3 tiles, got {len(tiles)}")
    shapes = {t.values.shape for t in tiles}
    if len(shapes) != 1:
        raise ValueError(f"tiles must share one shape, got {sorted(shapes)}")
    zones = tuple(t.zone_index for t in tiles)
    if not (zones[1] == zones[0] + 1 and zones[2] == zones[1] + 1):
        raise ValueError(f"tiles must cover consecutive ascending zones, got {zones}")
    wide = np.concatenate([t.values for t in tiles], axis=1)
    return FusedFeatureMap(values=bilinear_resize(wide, out_h, out_w), source_zones=zones)


DENOISE_CHUNK_RECORDS = 64


def denoise_records(records, cfg: VmdConfig, chunk_records: int = DENOISE_CHUNK_RECORDS):
    """VMD-denoise every zone of every record; labels and metadata unchanged.

    Records are processed in fixed-size chunks so the ADMM sweeps run over
    large stacks (decomposition cost is dominated by per-sweep overhead
    otherwise). Within a record the three zones share their mode passbands
    (they observe one source), and the correlation gate keeps the union of
    mode indices that qualify in any zone: gating zones differently would
    strip different noise floors and distort the inter-zone contrast the
    fused feature encodes.
    """
    records = list(records)
    out = []
    for start in range(0, len(records), chunk_records):
        chunk = records[start : start + chunk_records]
        stackin = np.stack([t.samples.astype(np.float64) for r in chunk for t in r.traces])
        tie_groups = np.repeat(np.arange(len(chunk)), ZONES_PER_RECORD)
        modes, _, _, _ = vmd_decompose_stack(stackin, SAMPLE_RATE_HZ, cfg, tie_groups=tie_groups,
                                             single_precision=True)
        for i, rec in enumerate(chunk):
            rows = slice(i * ZONES_PER_RECORD, (i + 1) * ZONES_PER_RECORD)
            rec_modes = modes[rows]
            rec_zones = stackin[rows]
            keep = np.zeros(cfg.n_modes, dtype=bool)
            best = (0, -1.0)
            for z in range(ZONES_PER_RECORD):
                rho = mode_correlations(rec_modes[z], rec_zones[z])
                keep |= rho >= cfg.rho_min
                if rho.max() > best[1]:
                    best = (int(np.argmax(rho)), float(rho.max()))
            if not keep.any():
                keep[best[0]] = True
            cleaned = rec_modes[:, keep, :].sum(axis=1)
            traces = tuple(
                ZoneTrace(t.zone_index, cleaned[z].astype(np.float32))
                for z, t in enumerate(rec.traces)
            )
            out.append(replace(rec, traces=traces))
    return out


def denoise_record(record: SampleRecord, cfg: VmdConfig) -> SampleRecord:
    """Single-record convenience wrapper around denoise_records."""
    return denoise_records([record], cfg)[0]


def _tf_summary_image(samples: np.ndarray, window: int, hop: int, out_h: int, out_w: int):
    """Render windowed RMS / zero-crossing rate / peak envelope as three bands."""
    frames = _frame(np.asarray(samples, dtype=np.float64), window, hop)
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    signs = np.signbit(frames).astype(np.int8)
    zcr = np.mean(np.abs(np.diff(signs, axis=1)), axis=1)
    peak = np.abs(frames).max(axis=1)
    band_h = out_h // 3
    bands = []
    for curve in (rms, zcr, peak):
        row = minmax_normalize(curve)[None, :]
        bands.append(np.repeat(row, band_h, axis=0))
    image = np.concatenate(bands, axis=0)
    if image.shape[0] < out_h:
        image = np.concatenate([image, np.repeat(image[-1:], out_h - image.shape[0], 0)], axis=0)
    return bilinear_resize(image, out_h, out_w)


def make_features(record: SampleRecord, variant: FeatureVariant, cfg: FeatureConfig) -> np.ndarray:
    """One (out_h, out_w) feature grid in [0, 1] for the requested variant."""
    variant = FeatureVariant(variant)
    if variant is FeatureVariant.RAW:
        x = record.center_trace.samples.astype(np.float64)
        n_out = cfg.out_h * cfg.out_w
        pos = np.linspace(0, len(x) - 1, n_out)
        resampled = np.interp(pos, np.arange(len(x)), x)
        return minmax_normalize(resampled.reshape(cfg.out_h, cfg.out_w))
    if variant is FeatureVariant.TF:
        return _tf_summary_image(
            record.center_trace.samples, cfg.window, cfg.hop, cfg.out_h, cfg.out_w
        )
    if variant is FeatureVariant.TFF:
        tile = stft_tile(record.center_trace, cfg.window, cfg.hop)
        return bilinear_resize(tile.values, cfg.out_h, cfg.out_w)
    if variant is FeatureVariant.STFF:
        tiles = [stft_tile(t, cfg.window, cfg.hop) for t in record.traces]
        return stitch(tiles, cfg.out_h, cfg.out_w).values
    if variant is FeatureVariant.STFF_AUG:
        return make_features(denoise_record(record, cfg.vmd), FeatureVariant.STFF, cfg)
    raise ValueError(f"unknown feature variant {variant!r}")


def featurize_records(records, variant, cfg: FeatureConfig):
    """Feature tensor (N, out_h, out_w, 1) float32 plus integer labels."""
    feats = np.empty((len(records), cfg.out_h, cfg.out_w, 1), dtype=np.float32)
    labels = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        feats[i, :, :, 0] = make_features(rec, variant, cfg)
        labels[i] = int(rec.label)
    return feats, labels


FEATURE_MAGIC = b"DASF"


def write_feature_file(tensor: np.ndarray, path) -> None:
    """Serialize one (H, W, C) float32 feature tensor, little-endian."""
    arr = np.asarray(tensor, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"feature tensor must be (H, W, C), got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_feature_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature tensor file (bad magic)")
    shape = tuple(np.frombuffer(raw, dtype="<u4", count=3, offset=4))
    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=16)
    if data.size != count:
        raise ValueError(f"{path}: truncated feature payload")
    return data.reshape(shape).copy()


def apply_augmentation(record: SampleRecord, shift: int, scale: float,
                       noise_sigma: float, rng=None) -> SampleRecord:
    """Apply one augmentation draw: circular shift, joint scale, joint noise.

    The shift, scale, and noise level are shared by all three zones so the
    center/neighbor amplitude ratio (the radial cue) is preserved.
    """
    rng = rng or np.random.default_rng(0)
    traces = []
    for t in record.traces:
        x = np.roll(t.samples.astype(np.float64), shift) * scale
        if noise_sigma > 0:
            x = x + rng.normal(0.0, noise_sigma, size=x.shape)
        traces.append(ZoneTrace(t.zone_index, x.astype(np.float32)))
    return replace(record, traces=tuple(traces))


def augment(record: SampleRecord, seed: int, n_out: int = 1,
            max_shift_frac: float = 0.1, scale_range=(0.8, 1.2),
            max_noise_frac: float = 0.05) -> list:
    """n_out label-preserving variations of a record, deterministic in seed."""
    if n_out < 1:
        raise ValueError("n_out must be >= 1")
    seed_key = [seed] if isinstance(seed, int) else list(seed)
    n = record.center_trace.samples.shape[0]
    all_samples = np.concatenate([t.samples for t in record.traces]).astype(np.float64)
    rms = float(np.sqrt(np.mean(all_samples * all_samples)))
    out = []
    for i in range(n_out):
        rng = np.random.default_rng(seed_key + [i])
        shift = int(rng.integers(-int(max_shift_frac * n), int(max_shift_frac * n) + 1))
        scale = float(rng.uniform(*scale_range))
        sigma = float(rng.uniform(0.0, max_noise_frac) * rms)
        out.append(apply_augmentation(record, shift, scale, sigma, rng))
    return out
