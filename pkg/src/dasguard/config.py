"""Run configuration: a flat key=value file plus flag overrides.

Unknown keys are rejected so typos fail loudly, and the effective
configuration is echoed into the output directory for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .features import FeatureConfig, FeatureVariant
from .simulate import ClassMap
from .training import TrainConfig
from .vmd import VmdConfig


class UnknownConfigKeyError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type parser, default)
KNOWN_KEYS = {
    "run_seed": (int, 0),
    "n_per_class": (int, 100),
    "alarm_max_m": (float, 12.5),
    "tracking_max_m": (float, 30.0),
    "noise_floor": (float, 0.35),
    "vmd.k": (int, 4),
    "vmd.alpha": (float, 2000.0),
    "vmd.tau": (float, 0.0),
    "vmd.tol": (float, 1e-7),
    "vmd.max_iters": (int, 500),
    "vmd.rho_min": (float, 0.1),
    "features.variant": (str, "stff_aug"),
    "features.window": (int, 256),
    "features.hop": (int, 64),
    "features.out_h": (int, 96),
    "features.out_w": (int, 96),
    "train.batch_size": (int, 8),
    "train.epochs": (int, 30),
    "train.lr_start": (float, 0.01),
    "train.lr_end": (float, 0.001),
    "train.aug_copies": (int, 1),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in self.values:
            if key not in KNOWN_KEYS:
                raise UnknownConfigKeyError(f"unknown config key: {key}")

    def get(self, key: str):
        if key not in KNOWN_KEYS:
            raise UnknownConfigKeyError(f"unknown config key: {key}")
        if key in self.values:
            return self.values[key]
        return KNOWN_KEYS[key][1]

    def set(self, key: str, raw):
        if key not in KNOWN_KEYS:
            raise UnknownConfigKeyError(f"unknown config key: {key}")
        parser = KNOWN_KEYS[key][0]
        self.values[key] = parser(raw) if isinstance(raw, str) else parser(raw)

    def class_map(self) -> ClassMap:
        return ClassMap(self.get("alarm_max_m"), self.get("tracking_max_m"))

    def vmd_config(self) -> VmdConfig:
        return VmdConfig(
            n_modes=self.get("vmd.k"),
            alpha=self.get("vmd.alpha"),
            tau=self.get("vmd.tau"),
            tol=self.get("vmd.tol"),
            max_iters=self.get("vmd.max_iters"),
            rho_min=self.get("vmd.rho_min"),
        )

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            window=self.get("features.window"),
            hop=self.get("features.hop"),
            out_h=self.get("features.out_h"),
            out_w=self.get("features.out_w"),
            vmd=self.vmd_config(),
        )

    def variant(self) -> FeatureVariant:
        return FeatureVariant.parse(self.get("features.variant"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.get("train.batch_size"),
            epochs=self.get("train.epochs"),
            lr_start=self.get("train.lr_start"),
            lr_end=self.get("train.lr_end"),
            seed=self.get("run_seed"),
        )

    def effective_lines(self):
        return [f"{key} = {self.get(key)}" for key in sorted(KNOWN_KEYS)]


def load_config(path) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = text.partition("=")
        cfg.set(key.strip(), raw.strip())
    return cfg


def echo_config(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.echo"
    path.write_text("\n".join(cfg.effective_lines()) + "\n")
    return path
