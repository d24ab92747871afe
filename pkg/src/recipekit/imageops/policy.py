"""AutoAugment policy tables: loading, validation and application."""

import json
from dataclasses import dataclass
from importlib import resources

from .ops import OP_KINDS, apply_op, check_magnitude

POLICY_LENGTH = 24


class PolicyError(ValueError):
    """Raised when a policy file is malformed or out of range."""


@dataclass(frozen=True)
class OpSlot:
    op: str
    prob: float
    magnitude: float


@dataclass(frozen=True)
class SubPolicy:
    first: OpSlot
    second: OpSlot

    @property
    def slots(self):
        return (self.first, self.second)


def _parse_slot(rec, where):
    if not isinstance(rec, dict):
        raise PolicyError(f"{where}: expected an object, got {type(rec).__name__}")
    missing = {"op", "prob", "magnitude"} - set(rec)
    if missing:
        raise PolicyError(f"{where}: missing keys {sorted(missing)}")
    extra = set(rec) - {"op", "prob", "magnitude"}
    if extra:
        raise PolicyError(f"{where}: unknown keys {sorted(extra)}")
    op = rec["op"]
    if op not in OP_KINDS:
        raise PolicyError(f"{where}: unknown op {op!r}")
    prob = rec["prob"]
    mag = rec["magnitude"]
    if not isinstance(prob, (int, float)) or not 0.0 <= prob <= 1.0:
        raise PolicyError(f"{where}: prob {prob!r} not in [0, 1]")
    if not isinstance(mag, (int, float)):
        raise PolicyError(f"{where}: magnitude {mag!r} is not a number")
    try:
        check_magnitude(op, mag)
    except ValueError as exc:
        raise PolicyError(f"{where}: {exc}") from None
    return OpSlot(op, float(prob), mag)


def parse_policy(data):
    """Validate decoded JSON into a tuple of exactly 24 sub-policies."""
    if not isinstance(data, list) or len(data) != POLICY_LENGTH:
        n = len(data) if isinstance(data, list) else type(data).__name__
        raise PolicyError(f"policy must list {POLICY_LENGTH} sub-policies, got {n}")
    table = []
    for i, entry in enumerate(data):
        if not isinstance(entry, list) or len(entry) != 2:
            raise PolicyError(f"sub-policy {i}: expected two operation records")
        table.append(SubPolicy(_parse_slot(entry[0], f"sub-policy {i}[0]"),
                               _parse_slot(entry[1], f"sub-policy {i}[1]")))
    return tuple(table)


def load_policy(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise PolicyError(f"cannot read policy {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise PolicyError(f"{path}: {exc}") from None
    return parse_policy(data)


def imagenet_policy():
    """The bundled 24-entry ImageNet policy table."""
    text = resources.files(__package__).joinpath("data/imagenet_policy.json").read_text()
    return parse_policy(json.loads(text))


def identity_policy():
    """24 copies of ``(Invert p=0, Invert p=0)``: never changes an image."""
    slot = OpSlot("Invert", 0.0, 0)
    return tuple(SubPolicy(slot, slot) for _ in range(POLICY_LENGTH))


def resolve_policy(name):
    """``imagenet``, ``identity`` or a path to a policy file."""
    if name == "imagenet":
        return imagenet_policy()
    if name == "identity":
        return identity_policy()
    return load_policy(name)


def autoaugment(img, table, rng):
    """Pick one sub-policy uniformly, then apply each slot with its probability."""
    idx = rng.integers(0, len(table), label="autoaugment.policy")
    for slot in table[idx].slots:
        if rng.bernoulli(slot.prob, label="autoaugment.apply"):
            img = apply_op(slot.op, slot.magnitude, img, rng)
    return img
