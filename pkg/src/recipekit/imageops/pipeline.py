"""Training-time augmentation: crop, flip, AutoAugment, normalise, CutMix."""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import check_image, hflip, random_resized_crop
from .policy import autoaugment, identity_policy

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ConfigError(ValueError):
    """Raised for invalid augmentation or training configuration."""


@dataclass(frozen=True)
class MixedTarget:
    """Label distribution over at most two classes; weights sum to one."""

    pairs: tuple

    def __post_init__(self):
        if not 1 <= len(self.pairs) <= 2:
            raise ValueError(f"a mixed target holds one or two classes, got {self.pairs}")
        classes = [c for c, _ in self.pairs]
        if len(set(classes)) != len(classes):
            raise ValueError(f"duplicate class in {self.pairs}")
        if any(w <= 0 for _, w in self.pairs):
            raise ValueError(f"weights must be positive: {self.pairs}")
        total = math.fsum(w for _, w in self.pairs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, not 1")

    @classmethod
    def hard(cls, label):
        return cls(((int(label), 1.0),))

    @classmethod
    def mix(cls, base, donor, donor_weight, base_weight=None):
        """Mixture pruned of zero-weight entries; identical classes collapse."""
        if base_weight is None:
            base_weight = 1.0 - donor_weight
        if base == donor:
            return cls.hard(base)
        pairs = [(int(c), float(w)) for c, w in ((base, base_weight), (donor, donor_weight)) if w > 0]
        return cls(tuple(pairs))

    @property
    def dominant(self):
        """Class with the largest weight; the first listed wins ties."""
        best = self.pairs[0]
        for pair in self.pairs[1:]:
            if pair[1] > best[1]:
                best = pair
        return best[0]

    def as_vector(self, num_classes):
        out = np.zeros(num_classes)
        for c, w in self.pairs:
            out[c] += w
        return out


@dataclass
class AugmentConfig:
    out_size: int = 32
    area_range: tuple = (0.08, 1.0)
    aspect_range: tuple = (3 / 4, 4 / 3)
    flip_prob: float = 0.5
    cutmix_prob: float = 0.5
    cutmix_alpha: float = 1.0
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    policy: tuple = field(default_factory=identity_policy)

    def __post_init__(self):
        lo, hi = self.area_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"area_range must satisfy 0 < lo <= hi <= 1, got {self.area_range}")
        a_lo, a_hi = self.aspect_range
        if not 0 < a_lo <= a_hi:
            raise ConfigError(f"aspect_range must satisfy 0 < lo <= hi, got {self.aspect_range}")
        if self.out_size < 1:
            raise ConfigError(f"out_size must be positive, got {self.out_size}")
        for name in ("flip_prob", "cutmix_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.cutmix_alpha <= 0:
            raise ConfigError(f"cutmix_alpha must be positive, got {self.cutmix_alpha}")
        check_norm(self.mean, self.std)


def check_norm(mean, std):
    if len(mean) != 3 or len(std) != 3:
        raise ConfigError("mean and std need three channel values each")
    if any(not s > 0 for s in std):
        raise ConfigError(f"std components must be positive, got {tuple(std)}")


def normalize(img, mean, std):
    """``(img / 255 - mean) / std`` per channel, as float32."""
    img = check_image(img, np.uint8)
    m = np.asarray(mean, dtype=np.float64)
    s = np.asarray(std, dtype=np.float64)
    return ((img / 255.0 - m) / s).astype(np.float32)


def normalize_float(pixels, mean, std):
    """Normalise float pixels in ``[0, 255]`` without rounding, in float64."""
    return (np.asarray(pixels, dtype=np.float64) / 255.0 - np.asarray(mean)) / np.asarray(std)


def denormalize(img, mean, std):
    """Inverse of :func:`normalize`, returning values in ``[0, 1]``."""
    return np.asarray(img, dtype=np.float64) * np.asarray(std) + np.asarray(mean)


def sample_cutmix_box(height, width, lam, rng):
    """Patch of side ``sqrt(1 - lam)`` times the image, centre uniform, clipped.

    Returns ``(y0, x0, y1, x1)`` with exclusive upper bounds.
    """
    r = math.sqrt(1.0 - lam)
    cut_w = int(width * r)
    cut_h = int(height * r)
    cx = rng.integers(0, width, label="cutmix.cx")
    cy = rng.integers(0, height, label="cutmix.cy")
    x0 = min(max(cx - cut_w // 2, 0), width)
    y0 = min(max(cy - cut_h // 2, 0), height)
    x1 = min(max(cx - cut_w // 2 + cut_w, 0), width)
    y1 = min(max(cy - cut_h // 2 + cut_h, 0), height)
    return y0, x0, y1, x1


def paste_patch(base, base_class, donor, donor_class, box):
    if base.shape != donor.shape:
        raise ValueError(f"CutMix images differ in shape: {base.shape} vs {donor.shape}")
    y0, x0, y1, x1 = box
    out = base.copy()
    out[y0:y1, x0:x1] = donor[y0:y1, x0:x1]
    h, w = base.shape[:2]
    area = max(y1 - y0, 0) * max(x1 - x0, 0)
    total = h * w
    target = MixedTarget.mix(base_class, donor_class, area / total, (total - area) / total)
    return out, target


def cutmix_pair(base, base_class, donor, donor_class, alpha, rng, lam=None, box=None):
    """Paste a random patch of ``donor`` into ``base`` and mix the labels by area.

    ``lam`` or ``box`` may be forced; otherwise ``lam ~ Beta(alpha, alpha)``.
    """
    h, w = base.shape[:2]
    if box is None:
        if lam is None:
            lam = rng.beta(alpha, alpha, label="cutmix.lambda")
        box = sample_cutmix_box(h, w, lam, rng)
    return paste_patch(base, base_class, donor, donor_class, box)


def augment_steps_1_to_4(img, cfg, rng, trace=None):
    """Random resized crop, flip, AutoAugment, normalise."""
    img = check_image(img, np.uint8)
    img = random_resized_crop(img, cfg.area_range, cfg.aspect_range, cfg.out_size, rng)
    if trace is not None:
        trace["crop"] = img
    if rng.bernoulli(cfg.flip_prob, label="flip"):
        img = hflip(img)
    if trace is not None:
        trace["flip"] = img
    img = autoaugment(img, cfg.policy, rng)
    if trace is not None:
        trace["autoaugment"] = img
    return normalize(img, cfg.mean, cfg.std)


def augment_train(img, label, partner_img, partner_label, cfg, rng, partner_rng,
                  cutmix_lam=None, cutmix_box=None, trace=None):
    """The five training steps in order; returns ``(float32 image, MixedTarget)``.

    The partner goes through steps 1-4 on its own stream before CutMix.
    """
    out = augment_steps_1_to_4(img, cfg, rng, trace)
    target = MixedTarget.hard(label)
    if rng.bernoulli(cfg.cutmix_prob, label="cutmix.apply"):
        donor = augment_steps_1_to_4(partner_img, cfg, partner_rng)
        out, target = cutmix_pair(out, label, donor, partner_label, cfg.cutmix_alpha, rng,
                                  lam=cutmix_lam, box=cutmix_box)
    if trace is not None:
        trace["cutmix"] = out
    return out, target


def augment_batch(images, labels, cfg, rngs, executor=None):
    """Augment a batch, pairing each CutMix sample with another batch member.

    ``rngs`` holds one stream per sample.  Partners are drawn uniformly from
    the other members and contribute their own steps 1-4 output.  Steps 1-4
    may run on ``executor``; each sample owns its stream, so results do not
    depend on scheduling.
    """
    n = len(images)
    if executor is None:
        stage = [augment_steps_1_to_4(img, cfg, rng) for img, rng in zip(images, rngs)]
    else:
        stage = list(executor.map(lambda a: augment_steps_1_to_4(a[0], cfg, a[1]),
                                  zip(images, rngs)))
    out = []
    targets = []
    for i in range(n):
        rng = rngs[i]
        img, target = stage[i], MixedTarget.hard(labels[i])
        if rng.bernoulli(cfg.cutmix_prob, label="cutmix.apply") and n > 1:
            j = rng.integers(0, n - 1, label="cutmix.partner")
            j += j >= i
            img, target = cutmix_pair(img, labels[i], stage[j], labels[j], cfg.cutmix_alpha, rng)
        out.append(img)
        targets.append(target)
    return np.stack(out), targets
