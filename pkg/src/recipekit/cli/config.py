"""Flat ``key=value`` run configuration with typed validation."""

import dataclasses
import hashlib
import os
from dataclasses import dataclass

from ..imageops.pipeline import IMAGENET_MEAN, IMAGENET_STD, AugmentConfig, ConfigError
from ..imageops.policy import PolicyError, resolve_policy
from ..inference import PAPER_SCALES, scaled_scales
from ..losses import CombinedLossConfig

RESOLVED_NAME = "resolved-config.txt"


@dataclass
class RunConfig:
    train_manifest: str = ""
    val_manifest: str = ""
    num_classes: int = 10
    image_size: int = 32
    batch_size: int = 128
    epochs: int = 20
    loss_mode: str = "ce"
    smoothing: float = 0.1
    triplet_margin: float = 0.3
    arcface_scale: float = 30.0
    arcface_margin: float = 0.5
    aux_weight: float = 1.0
    area_min: float = 0.08
    area_max: float = 1.0
    aspect_min: float = 3 / 4
    aspect_max: float = 4 / 3
    flip_prob: float = 0.5
    cutmix_prob: float = 0.5
    cutmix_alpha: float = 1.0
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    policy: str = "imagenet"
    base_lr: float = 0.1
    warmup_epochs: int = 1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    init_checkpoint: str = ""
    from_scratch: bool = False
    embed_dim: int = 64
    pk_classes: int = 8
    pk_samples: int = 4
    merge_splits: bool = False
    tta_scales: tuple = ()
    dtype: str = "float32"
    threads: int = 1
    out_dir: str = "run"

    def augment_config(self):
        return AugmentConfig(
            out_size=self.image_size,
            area_range=(self.area_min, self.area_max),
            aspect_range=(self.aspect_min, self.aspect_max),
            flip_prob=self.flip_prob,
            cutmix_prob=self.cutmix_prob,
            cutmix_alpha=self.cutmix_alpha,
            mean=tuple(self.mean),
            std=tuple(self.std),
            policy=resolve_policy(self.policy),
        )

    def loss_config(self):
        return CombinedLossConfig(
            mode=self.loss_mode,
            aux_weight=self.aux_weight,
            smoothing=self.smoothing,
            triplet_margin=self.triplet_margin,
            arcface_scale=self.arcface_scale,
            arcface_margin=self.arcface_margin,
        )

    def scales(self):
        return tuple(self.tta_scales) or scaled_scales(self.image_size)

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        for key in ("image_size", "batch_size", "embed_dim", "pk_classes", "pk_samples",
                    "threads"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs and warmup_epochs must be >= 0")
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ConfigError(
                f"warmup_epochs ({self.warmup_epochs}) must be smaller than epochs ({self.epochs})"
            )
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("momentum must lie in [0, 1) and weight_decay must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.loss_mode == "ce+triplet" and self.pk_classes > self.num_classes:
            raise ConfigError("pk_classes cannot exceed num_classes")
        if any(s < 8 for s in self.scales()):
            raise ConfigError(f"TTA scales must be >= 8, got {self.scales()}")
        try:
            self.augment_config()
        except PolicyError as exc:
            raise ConfigError(f"policy: {exc}") from None
        self.loss_config()
        return self

    # -- serialisation ------------------------------------------------------

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, tuple):
                s = ",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{f.name}={s}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_PATH_KEYS = ("train_manifest", "val_manifest", "init_checkpoint", "out_dir")
_INT_TUPLES = ("tta_scales",)


def _convert(key, raw):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            conv = int if key in _INT_TUPLES else float
            return tuple(conv(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def apply_overrides(cfg, pairs, base_dir=None):
    """Apply ``key=value`` strings; unknown keys are errors."""
    changes = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        value = _convert(key, raw)
        if key in _PATH_KEYS and value and base_dir and not os.path.isabs(value):
            value = os.path.normpath(os.path.join(base_dir, value))
        changes[key] = value
    return cfg.replace(**changes)


def parse_config_text(text, base_dir=None, cfg=None):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        pairs.append(line)
    return apply_overrides(cfg or RunConfig(), pairs, base_dir)


def load_config(path, cfg=None):
    """Read a config file; relative paths inside it resolve against its directory."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, os.path.dirname(os.path.abspath(path)), cfg)


PRESETS = {
    "desk": {},
    "paper": {
        "image_size": 224,
        "batch_size": 128,
        "epochs": 250,
        "tta_scales": PAPER_SCALES,
    },
}


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig().replace(**PRESETS[name])
