"""SGD with momentum and coupled weight decay, and a warmup + cosine schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from .imageops.pipeline import ConfigError


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite value."""


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup from zero to ``(B / 256) * base_lr``, then cosine decay to zero.

    Steps are optimizer steps (batches), not epochs.
    """

    base_lr: float = 0.1
    batch_size: int = 256
    warmup_steps: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.base_lr > 0:
            raise ConfigError(f"base learning rate must be positive, got {self.base_lr}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps} "
                f"and {self.total_steps}"
            )


def initial_lr(sched):
    return sched.batch_size / 256 * sched.base_lr


def lr_at(step, sched):
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    peak = initial_lr(sched)
    if step < sched.warmup_steps:
        return peak * step / sched.warmup_steps
    progress = (step - sched.warmup_steps) / (sched.total_steps - sched.warmup_steps)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class SgdState:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, momentum=0.9, weight_decay=1e-4):
        vel = {name: np.zeros_like(p) for name, p in params.items()}
        return cls(momentum, weight_decay, vel)


def sgd_step(params, grads, state, lr):
    """One in-place update: ``v = mu * v + (g + wd * p)``, ``p -= lr * v``.

    Returns ``(params, state)`` for convenience.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise TrainingError(f"non-finite gradient for {name}: {bad} of {g.size} entries")
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        step_g = g + state.weight_decay * p
        v *= state.momentum
        v += step_g
        p -= lr * v
    return params, state
