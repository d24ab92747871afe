"""Classification and metric-learning losses with analytic gradients.

Every loss returns a :class:`LossOutput` whose ``grads`` dict is keyed by the
differentiable input (``"logits"``, ``"embeddings"``, ``"weight"``).
All arithmetic runs in float64.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .imageops.pipeline import ConfigError, MixedTarget

COS_EPS = 1e-7

LOSS_MODES = ("ce", "ce+triplet", "ce+arcface")


class LossInputError(ValueError):
    """Raised for non-finite or otherwise unusable loss inputs."""


class DegenerateBatchError(LossInputError):
    """No anchor in the batch has both a positive and a negative."""


@dataclass
class LossOutput:
    value: float
    grads: dict
    aux: dict = field(default_factory=dict)


@dataclass
class TripletConfig:
    margin: float = 0.3

    def __post_init__(self):
        if not self.margin >= 0:
            raise ConfigError(f"triplet margin must be >= 0, got {self.margin}")


@dataclass
class ArcFaceHead:
    """Class-centre matrix ``(K, D)`` with scale ``s`` and angular margin ``m``."""

    weight: np.ndarray
    scale: float = 30.0
    margin: float = 0.5

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"ArcFace scale must be positive, got {self.scale}")
        if not 0 <= self.margin < math.pi:
            raise ConfigError(f"ArcFace margin must lie in [0, pi), got {self.margin}")


@dataclass
class CombinedLossConfig:
    mode: str = "ce"
    aux_weight: float = 1.0
    smoothing: float = 0.1
    triplet_margin: float = 0.3
    arcface_scale: float = 30.0
    arcface_margin: float = 0.5

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ConfigError(f"loss mode must be one of {LOSS_MODES}, got {self.mode!r}")
        if not self.aux_weight >= 0:
            raise ConfigError(f"aux_weight must be >= 0, got {self.aux_weight}")
        if not 0 <= self.smoothing < 1:
            raise ConfigError(f"smoothing must lie in [0, 1), got {self.smoothing}")
        TripletConfig(self.triplet_margin)
        ArcFaceHead(np.zeros((1, 1)), self.arcface_scale, self.arcface_margin)


# ---------------------------------------------------------------------------
# label-smoothed cross-entropy
# ---------------------------------------------------------------------------


def smooth_targets(label, num_classes, eps):
    """``1 - eps`` on ``label``, ``eps / (K - 1)`` on every other class."""
    if num_classes < 2:
        raise ConfigError(f"label smoothing needs at least two classes, got {num_classes}")
    if not 0 <= eps < 1:
        raise ConfigError(f"smoothing must lie in [0, 1), got {eps}")
    if not 0 <= label < num_classes:
        raise ConfigError(f"label {label} outside [0, {num_classes})")
    q = np.full(num_classes, eps / (num_classes - 1))
    q[label] = 1.0 - eps
    return q


def target_matrix(targets, num_classes, eps):
    """Stack smoothed targets for hard labels or :class:`MixedTarget` rows.

    Mixed targets smooth each component label and then mix them by weight.
    A float ``(N, K)`` array is taken as already-built targets.
    """
    if isinstance(targets, np.ndarray) and targets.ndim == 2:
        return targets.astype(np.float64)
    rows = []
    for t in targets:
        if isinstance(t, MixedTarget):
            q = np.zeros(num_classes)
            for c, w in t.pairs:
                q += w * smooth_targets(c, num_classes, eps)
            rows.append(q)
        else:
            rows.append(smooth_targets(int(t), num_classes, eps))
    return np.array(rows)


def log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ce_smoothed(logits, targets, eps=0.0):
    """Batch-mean cross-entropy against smoothed (and possibly mixed) targets.

    ``logits`` is ``(K,)`` or ``(N, K)``; ``targets`` holds hard labels,
    :class:`MixedTarget` rows or a prebuilt ``(N, K)`` target matrix.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
        if isinstance(targets, np.ndarray) and targets.dtype.kind == "f":
            targets = targets[None, :]
        else:
            targets = [targets]
    if not np.all(np.isfinite(z)):
        raise LossInputError("logits contain NaN or Inf")
    n, k = z.shape
    q = target_matrix(targets, k, eps)
    if q.shape != z.shape:
        raise LossInputError(f"target shape {q.shape} does not match logits {z.shape}")
    logp = log_softmax(z)
    value = float(-(q * logp).sum() / n)
    grad = (np.exp(logp) - q) / n
    return LossOutput(value, {"logits": grad[0] if single else grad})


# ---------------------------------------------------------------------------
# batch-hard triplet
# ---------------------------------------------------------------------------


def pairwise_euclidean(emb):
    """``(N, N)`` Euclidean distances from direct coordinate differences."""
    emb = np.asarray(emb, dtype=np.float64)
    if not np.all(np.isfinite(emb)):
        raise LossInputError("embeddings contain NaN or Inf")
    return np.sqrt(np.maximum(_accel.pairwise_sqdist(emb), 0.0))


def batch_hard_triplet(emb, labels, cfg=None):
    """Hardest-positive / hardest-negative hinge, averaged over valid anchors.

    Anchors without a same-class partner or without a different-class sample
    are skipped.  Ties pick the lowest index.
    """
    cfg = cfg or TripletConfig()
    x = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    n = x.shape[0]
    dist = pairwise_euclidean(x)
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DegenerateBatchError(
            "no anchor has both a positive and a negative; use class-balanced batches"
        )
    pos = np.argmax(np.where(pos_mask, dist, -np.inf), axis=1)
    neg = np.argmin(np.where(neg_mask, dist, np.inf), axis=1)
    rows = np.arange(n)
    d_ap = dist[rows, pos]
    d_an = dist[rows, neg]
    hinge = (cfg.margin + d_ap) - d_an
    per_anchor = np.where(valid, np.maximum(hinge, 0.0), 0.0)
    value = math.fsum(per_anchor[valid].tolist()) / n_valid
    active = valid & (hinge > 0)

    grad = np.zeros_like(x)
    scale = 1.0 / n_valid
    for a in np.flatnonzero(active):
        p, q = pos[a], neg[a]
        if d_ap[a] > 0:
            g = (x[a] - x[p]) * (scale / d_ap[a])
            grad[a] += g
            grad[p] -= g
        if d_an[a] > 0:
            g = (x[a] - x[q]) * (scale / d_an[a])
            grad[a] -= g
            grad[q] += g
    aux = {"positive": pos, "negative": neg, "valid": valid, "active": active,
           "hinge": hinge}
    return LossOutput(value, {"embeddings": grad}, aux)


# ---------------------------------------------------------------------------
# ArcFace
# ---------------------------------------------------------------------------


def _unit_rows(m, what):
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    if np.any(norms == 0) or not np.all(np.isfinite(m)):
        raise LossInputError(f"{what} has a zero-norm or non-finite row")
    return m / norms, norms


def _arcface_forward(emb, head, labels):
    e = np.asarray(emb, dtype=np.float64)
    w = np.asarray(head.weight, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    e_hat, e_norm = _unit_rows(e, "embedding batch")
    w_hat, w_norm = _unit_rows(w, "ArcFace weight")
    raw = e_hat @ w_hat.T
    cos = np.clip(raw, -1.0, 1.0)
    rows = np.arange(len(labels))
    c_y = cos[rows, labels]
    m = head.margin
    cos_m, sin_m = math.cos(m), math.sin(m)
    sin_y = np.sqrt(np.maximum(1.0 - c_y * c_y, 0.0))
    # d sin/d cos is unbounded at |cos| = 1; only the margin term needs the guard
    sin_floor = math.sqrt(1.0 - (1.0 - COS_EPS) ** 2)
    # theta_y + m < pi  <=>  cos(theta_y) > cos(pi - m)
    regular = c_y > math.cos(math.pi - m)
    phi = np.where(regular, c_y * cos_m - sin_y * sin_m, c_y - m * sin_m)
    dphi = np.where(regular, cos_m + c_y * sin_m / np.maximum(sin_y, sin_floor), 1.0)
    adjusted = cos.copy()
    adjusted[rows, labels] = phi
    state = dict(e_hat=e_hat, e_norm=e_norm, w_hat=w_hat, w_norm=w_norm, raw=raw,
                 labels=labels, rows=rows, dphi=dphi)
    return head.scale * adjusted, state


def arcface_logits(emb, head, labels):
    """Scaled cosine logits with the additive angular margin on the true class."""
    return _arcface_forward(emb, head, labels)[0]


def arcface_loss(emb, head, labels):
    """Softmax cross-entropy over ArcFace logits, with gradients for both inputs."""
    z, st = _arcface_forward(emb, head, labels)
    n = z.shape[0]
    logp = log_softmax(z)
    rows, labels = st["rows"], st["labels"]
    value = float(-logp[rows, labels].sum() / n)

    dz = np.exp(logp)
    dz[rows, labels] -= 1.0
    dz /= n
    dcos = head.scale * dz
    dcos[rows, labels] *= st["dphi"]
    e_hat, w_hat = st["e_hat"], st["w_hat"]
    de_hat = dcos @ w_hat
    dw_hat = dcos.T @ e_hat
    de = (de_hat - e_hat * (e_hat * de_hat).sum(axis=1, keepdims=True)) / st["e_norm"]
    dw = (dw_hat - w_hat * (w_hat * dw_hat).sum(axis=1, keepdims=True)) / st["w_norm"]
    return LossOutput(value, {"embeddings": de, "weight": dw})


# ---------------------------------------------------------------------------
# combinations
# ---------------------------------------------------------------------------


def combined_loss(logits, embeddings, targets, labels, cfg, head=None):
    """Smoothed CE plus ``aux_weight`` times the mode's metric loss.

    ``targets`` feed the CE term (hard labels, mixed targets or a matrix);
    ``labels`` are the hard labels used by the metric term.
    Gradient keys: ``logits``, ``embeddings`` and, for ArcFace, ``arcface``.
    """
    ce = ce_smoothed(logits, targets, cfg.smoothing)
    grads = {"logits": ce.grads["logits"]}
    parts = {"ce": ce.value}
    value = ce.value
    if cfg.mode != "ce":
        if embeddings is None:
            raise ConfigError(f"loss mode {cfg.mode!r} needs the embedding output")
        emb = np.asarray(embeddings, dtype=np.float64)
        if cfg.mode == "ce+triplet":
            aux = batch_hard_triplet(emb, labels, TripletConfig(cfg.triplet_margin))
            parts["triplet"] = aux.value
        else:
            if head is None:
                raise ConfigError("loss mode 'ce+arcface' needs an ArcFace head")
            aux = arcface_loss(emb, head, labels)
            parts["arcface"] = aux.value
            grads["arcface"] = cfg.aux_weight * aux.grads["weight"]
        value = value + cfg.aux_weight * aux.value
        grads["embeddings"] = cfg.aux_weight * aux.grads["embeddings"]
    elif embeddings is not None:
        grads["embeddings"] = np.zeros(np.shape(embeddings))
    return LossOutput(float(value), grads, parts)
