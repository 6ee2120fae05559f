"""Training loop, transfer-learning experiment, and the method ablation.

SGD with momentum 0.9 and weight decay 1e-4, batch size 8, and a cosine
learning-rate schedule between the configured start and end rates. All
randomness (shuffling, dropout, pretext data) derives from the run seed, so
a rerun reproduces losses and metrics exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .features import FeatureConfig, FeatureVariant, augment, denoise_records, featurize_records
from .metrics import MetricsReport, evaluate
from .nn.layers import cross_entropy
from .nn.model import ThreatNet, base_config
from .trace_io import SAMPLE_RATE_HZ, ThreatClass
from .vmd import VmdConfig


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 100
    lr_start: float = 0.01
    lr_end: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    pretrained: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Cosine interpolation from lr_start (epoch 0) to lr_end (last epoch)."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr_start
    span = cfg.lr_start - cfg.lr_end
    return cfg.lr_end + span * (1 + math.cos(math.pi * epoch / (cfg.epochs - 1))) / 2


class SGD:
    """Momentum SGD: v <- m*v + g + wd*theta; theta <- theta - lr*v."""

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, lr: float) -> None:
        for (name, p), v in zip(self.params, self.velocity):
            if p.grad is None:
                raise RuntimeError(f"parameter {name} has no gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_acc: float | None = None


def history_csv(history) -> str:
    lines = ["epoch,loss,val_acc"]
    for h in history:
        val = "" if h.val_acc is None else f"{h.val_acc:.6f}"
        lines.append(f"{h.epoch},{h.loss:.6f},{val}")
    return "\n".join(lines) + "\n"


def _accuracy(model, features, labels, batch_size=64) -> float:
    preds = model.predict(features, batch_size=batch_size)
    return float((preds == labels).mean())


def train(model: ThreatNet, features, labels, cfg: TrainConfig,
          val_features=None, val_labels=None, epochs: int | None = None,
          stop_at_val_acc: float | None = None):
    """Run SGD; returns per-epoch stats. Aborts on non-finite loss.

    `epochs` overrides cfg.epochs for the loop length while keeping the
    configured cosine schedule; `stop_at_val_acc` ends training early once
    the validation accuracy reaches the threshold.
    """
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(features)
    run_epochs = cfg.epochs if epochs is None else epochs
    schedule_cfg = cfg if epochs is None else replace(cfg, epochs=epochs)
    optimizer = SGD(model.named_params(), cfg.momentum, cfg.weight_decay)
    history = []
    for epoch in range(run_epochs):
        lr = lr_at(epoch, schedule_cfg)
        model.rng_source.reseed([cfg.seed, 91, epoch])
        order = np.random.default_rng([cfg.seed, 17, epoch]).permutation(n)
        total_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = model.forward(features[idx], training=True)
            loss, dlogits = cross_entropy(logits, labels[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch {batches} (lr={lr:.4g})"
                )
            model.backward(dlogits)
            optimizer.step(lr)
            total_loss += loss
            batches += 1
        stats = EpochStats(epoch, total_loss / max(batches, 1))
        if val_features is not None:
            stats.val_acc = _accuracy(model, val_features, val_labels)
        history.append(stats)
        if (
            stop_at_val_acc is not None
            and stats.val_acc is not None
            and stats.val_acc >= stop_at_val_acc
        ):
            break
    return history


@dataclass
class PretextTask:
    """Spectrogram-texture classification: band-count and chirp-direction classes.

    Classes are tone stacks of 1..band_classes bands plus up/down chirps;
    deliberately disjoint from the three threat labels.
    """

    n_samples: int = 600
    band_classes: int = 2
    chirp_classes: int = 2
    duration_s: float = 2.0
    noise_sigma: float = 0.3
    seed: int = 0

    @property
    def classes(self) -> int:
        return self.band_classes + self.chirp_classes

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("pretext task needs at least 2 classes")


def generate_pretext_dataset(task: PretextTask, cfg: FeatureConfig):
    """Waveforms rendered through the same tile pipeline as the threat data."""
    from .trace_io import ZoneTrace
    from .features import stft_tile, bilinear_resize

    n_samples = task.n_samples
    n_pts = int(task.duration_s * SAMPLE_RATE_HZ)
    feats = np.empty((n_samples, cfg.out_h, cfg.out_w, 1), dtype=np.float32)
    labels = np.empty(n_samples, dtype=np.int64)
    t = np.arange(n_pts) / SAMPLE_RATE_HZ
    for i in range(n_samples):
        rng = np.random.default_rng([task.seed, 23, i])
        cls = i % task.classes
        x = rng.normal(0.0, task.noise_sigma, n_pts)
        if cls < task.band_classes:
            for _ in range(cls + 1):
                f0 = rng.uniform(60, 900)
                x += np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
        else:
            f_lo, f_hi = sorted(rng.uniform(60, 900, size=2))
            if cls - task.band_classes == 1:
                f_lo, f_hi = f_hi, f_lo
            phase = 2 * np.pi * np.cumsum(np.linspace(f_lo, f_hi, n_pts)) / SAMPLE_RATE_HZ
            x += np.sin(phase + rng.uniform(0, 2 * np.pi))
        trace = ZoneTrace(1, x.astype(np.float32))
        tile = stft_tile(trace, cfg.window, cfg.hop)
        feats[i, :, :, 0] = bilinear_resize(tile.values, cfg.out_h, cfg.out_w)
        labels[i] = cls
    return feats, labels


@dataclass
class TransferOutcome:
    epochs_to_threshold_scratch: int
    epochs_to_threshold_pretrained: int
    pretext_val_acc: float
    head_reset_acc: float
    scratch_curve: list
    pretrained_curve: list


def _epochs_to_threshold(history, threshold: float, budget: int) -> int:
    for h in history:
        if h.val_acc is not None and h.val_acc >= threshold:
            return h.epoch + 1
    return budget + 1


def pretrain_then_finetune(
    pretext: PretextTask,
    train_features, train_labels,
    val_features, val_labels,
    cfg: TrainConfig,
    feature_cfg: FeatureConfig | None = None,
    threshold: float = 0.90,
    budget_epochs: int = 40,
    pretext_epochs: int = 12,
    model_specs=None,
    input_res: int | None = None,
) -> TransferOutcome:
    """Compare epochs-to-threshold with and without pretext pretraining."""
    feature_cfg = feature_cfg or FeatureConfig()
    input_res = input_res or feature_cfg.out_h
    specs = model_specs or base_config()

    # pretext phase
    px, py = generate_pretext_dataset(pretext, feature_cfg)
    n_val = max(1, len(px) // 5)
    px_train, px_val = px[:-n_val], px[-n_val:]
    py_train, py_val = py[:-n_val], py[-n_val:]
    pre_model = ThreatNet(specs, input_res=input_res, n_classes=pretext.classes,
                          seed=cfg.seed)
    pre_cfg = replace(cfg, epochs=pretext_epochs)
    train(pre_model, px_train, py_train, pre_cfg)
    pretext_val_acc = _accuracy(pre_model, px_val, py_val)

    # transfer: swap the head, measure pre-finetune accuracy, fine-tune
    pre_model.reinit_head(3, seed=cfg.seed + 1)
    head_reset_acc = _accuracy(pre_model, val_features, val_labels)
    ft_cfg = replace(cfg, epochs=budget_epochs)
    pre_curve = train(pre_model, train_features, train_labels, ft_cfg,
                      val_features, val_labels, stop_at_val_acc=threshold)

    # from-scratch reference with an identical recipe
    scratch = ThreatNet(specs, input_res=input_res, n_classes=3, seed=cfg.seed + 2)
    scratch_curve = train(scratch, train_features, train_labels, ft_cfg,
                          val_features, val_labels, stop_at_val_acc=threshold)

    return TransferOutcome(
        epochs_to_threshold_scratch=_epochs_to_threshold(scratch_curve, threshold, budget_epochs),
        epochs_to_threshold_pretrained=_epochs_to_threshold(pre_curve, threshold, budget_epochs),
        pretext_val_acc=pretext_val_acc,
        head_reset_acc=head_reset_acc,
        scratch_curve=scratch_curve,
        pretrained_curve=pre_curve,
    )


@dataclass
class AblationArm:
    variant: FeatureVariant
    report: MetricsReport
    history: list
    model: object = None


@dataclass
class AblationResult:
    arms: list

    def report_for(self, variant) -> MetricsReport:
        variant = FeatureVariant(variant)
        for arm in self.arms:
            if arm.variant is variant:
                return arm.report
        raise KeyError(f"no arm for variant {variant}")

    def rows(self):
        return [(arm.variant.value, arm.report) for arm in self.arms]


def ablation_run(train_records, test_records, variants, feature_cfg: FeatureConfig,
                 train_cfg: TrainConfig, epochs: int | None = None,
                 aug_copies: int = 1) -> AblationResult:
    """Train and evaluate one classifier per feature variant.

    Every arm shares the dataset, model architecture, initialization seed,
    and training recipe; only the featurization differs. The STFF_AUG arm
    expands its training set with `aug_copies` augmented copies per record
    before denoising, so originals and copies pass through the identical
    denoise -> stitch pipeline the test set sees.
    """
    variants = [FeatureVariant(v) for v in variants]
    arms = []
    for variant in variants:
        t0 = time.perf_counter()
        if variant is FeatureVariant.STFF_AUG:
            expanded = list(train_records)
            for i, rec in enumerate(train_records):
                expanded.extend(augment(rec, seed=[train_cfg.seed, 47, i], n_out=aug_copies))
            cleaned = denoise_records(expanded, feature_cfg.vmd)
            train_x, train_y = featurize_records(cleaned, FeatureVariant.STFF, feature_cfg)
            cleaned_test = denoise_records(test_records, feature_cfg.vmd)
            test_x, test_y = featurize_records(cleaned_test, FeatureVariant.STFF, feature_cfg)
        else:
            train_x, train_y = featurize_records(train_records, variant, feature_cfg)
            test_x, test_y = featurize_records(test_records, variant, feature_cfg)

        model = ThreatNet(input_res=feature_cfg.out_h, n_classes=3, seed=train_cfg.seed)
        history = train(model, train_x, train_y, train_cfg, epochs=epochs)
        report = evaluate(model, test_x, test_y)
        report.wall_time_s = time.perf_counter() - t0
        arms.append(AblationArm(variant, report, history, model))
    return AblationResult(arms)
