"""Test-time augmentation, probability fusion, ensembling and top-1 accuracy."""

import math
from dataclasses import dataclass

import numpy as np

from .imageops.geometry import check_image, resample_box, sample_crop_box
from .imageops.pipeline import IMAGENET_MEAN, IMAGENET_STD, normalize_float
from .model import predict_probs
from .rng import RngStream, text_stream_id

PAPER_SCALES = (224, 320, 380, 448)
RESIZE_RATIO = 256 / 224
CENTER = "center"
RANDOM_AREA = "random-area"
TTA_AREA_RANGE = (0.8, 1.0)
TTA_ASPECT_RANGE = (3 / 4, 4 / 3)


class FusionError(ValueError):
    """Probability matrices disagree on their sample ids or shape."""


class ProbMatrixFormatError(ValueError):
    pass


def scaled_scales(image_size, reference=224, scales=PAPER_SCALES):
    """Scale the canonical TTA sizes to a different training resolution."""
    return tuple(int(round(s * image_size / reference)) for s in scales)


@dataclass(frozen=True)
class TtaView:
    scale: int
    method: str
    box: tuple  # (top, left, height, width) in source pixels
    image: np.ndarray


def center_box(height, width, scale):
    """Box that resizing the short edge to ``round(scale * 256/224)`` and
    centre-cropping ``scale x scale`` reads from the source image."""
    short = min(height, width)
    resized_short = int(round(scale * RESIZE_RATIO))
    side = scale * short / resized_short
    return ((height - side) / 2.0, (width - side) / 2.0, side, side)


def view_boxes(height, width, scales, seed, image_id):
    """The eight ``(scale, method, box)`` triples: centre then random per scale.

    The random-area crop for each scale is drawn from a stream keyed by
    ``(seed, image_id, scale)``.
    """
    if height < 1 or width < 1:
        raise ValueError(f"degenerate image size {height}x{width}")
    out = []
    for s in scales:
        out.append((s, CENTER, center_box(height, width, s)))
        rng = RngStream(seed, text_stream_id(image_id, s))
        box = sample_crop_box(height, width, TTA_AREA_RANGE, TTA_ASPECT_RANGE, rng)
        out.append((s, RANDOM_AREA, tuple(float(v) for v in box)))
    return out


def mirror_boxes(boxes, width):
    """Boxes reading the same content from the horizontally mirrored image."""
    return [(s, m, (t, width - left - w, h, w)) for s, m, (t, left, h, w) in boxes]


def render_view(img, box, scale, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    top, left, h, w = box
    pixels = resample_box(img, top, left, h, w, scale, scale)
    return normalize_float(pixels, mean, std).astype(np.float32)


def make_views(img, scales=PAPER_SCALES, seed=0, image_id=0, mean=IMAGENET_MEAN,
               std=IMAGENET_STD, boxes=None):
    """Eight normalised ``scale x scale`` views: 4 scales x 2 crop methods."""
    img = check_image(img, np.uint8)
    if boxes is None:
        boxes = view_boxes(img.shape[0], img.shape[1], scales, seed, image_id)
    return [TtaView(s, m, box, render_view(img, box, s, mean, std)) for s, m, box in boxes]


def _flip_batch(x):
    return np.ascontiguousarray(x[:, :, ::-1, :])


def predict_views(model, views):
    """Per-view probability averaged over the view and its mirror image.

    ``views`` is a list of equally sized ``(N, S, S, 3)`` stacks, one per view
    slot; returns the ``(N, K)`` mean over slots.
    """
    per_view = []
    for stack in views:
        p = predict_probs(model, stack)
        q = predict_probs(model, _flip_batch(stack))
        per_view.append((p + q) / 2.0)
    return np.mean(per_view, axis=0)


def predict_tta(model, img, scales=PAPER_SCALES, seed=0, image_id=0,
                mean=IMAGENET_MEAN, std=IMAGENET_STD, boxes=None):
    """Fused class probabilities for one image."""
    views = make_views(img, scales, seed, image_id, mean, std, boxes)
    return predict_views(model, [v.image[None] for v in views])[0]


def predict_tta_batch(model, images, image_ids, scales, seed, mean=IMAGENET_MEAN,
                      std=IMAGENET_STD):
    """:func:`predict_tta` for many images, batching each view slot."""
    slots = None
    for img, iid in zip(images, image_ids):
        views = make_views(img, scales, seed, iid, mean, std)
        if slots is None:
            slots = [[] for _ in views]
        for slot, v in zip(slots, views):
            slot.append(v.image)
    if slots is None:
        return np.zeros((0, model.num_classes))
    return predict_views(model, [np.stack(s) for s in slots])


def predict_center(model, images, scale, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Single centre view per image (no TTA)."""
    stack = []
    for img in images:
        img = check_image(img, np.uint8)
        stack.append(render_view(img, center_box(img.shape[0], img.shape[1], scale), scale,
                                 mean, std))
    if not stack:
        return np.zeros((0, model.num_classes))
    return predict_probs(model, np.stack(stack))


# ---------------------------------------------------------------------------
# probability matrices
# ---------------------------------------------------------------------------


@dataclass
class ProbMatrix:
    ids: tuple
    probs: np.ndarray

    def __post_init__(self):
        self.ids = tuple(str(i) for i in self.ids)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids do not match probabilities {self.probs.shape}")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")

    def reordered(self, ids):
        index = {sid: i for i, sid in enumerate(self.ids)}
        return ProbMatrix(tuple(ids), self.probs[[index[i] for i in ids]])


def fuse(mats):
    """Elementwise mean of probability matrices, aligned by sample id."""
    if not mats:
        raise FusionError("nothing to fuse")
    ref = mats[0]
    ref_ids = set(ref.ids)
    aligned = []
    for i, m in enumerate(mats):
        ids = set(m.ids)
        if ids != ref_ids:
            missing = sorted(ref_ids - ids)[:10]
            extra = sorted(ids - ref_ids)[:10]
            raise FusionError(
                f"matrix {i} sample ids differ from matrix 0: missing {missing}, extra {extra}"
            )
        if m.probs.shape[1] != ref.probs.shape[1]:
            raise FusionError(
                f"matrix {i} has {m.probs.shape[1]} classes, matrix 0 has {ref.probs.shape[1]}"
            )
        aligned.append(m.reordered(ref.ids).probs)
    return ProbMatrix(ref.ids, np.mean(np.stack(aligned), axis=0))


def top1_accuracy(probs, labels):
    """Fraction of rows whose argmax equals the label; ties go to the lower class."""
    p = probs.probs if isinstance(probs, ProbMatrix) else np.asarray(probs)
    labels = np.asarray(labels)
    if len(p) != len(labels):
        raise ValueError(f"{len(p)} predictions but {len(labels)} labels")
    if len(p) == 0:
        return 0.0
    return float(np.mean(np.argmax(p, axis=1) == labels))


def _format_row(row):
    """Nine significant digits, nudging the largest entry so the printed row sums to 1."""
    vals = [float(f"{v:.9g}") for v in row]
    j = int(np.argmax(row))
    resid = 1.0 - math.fsum(vals)
    if abs(resid) < 1e-7:
        vals[j] = float(f"{vals[j] + resid:.9g}")
    return " ".join(f"{v:.9g}" for v in vals)


def format_probmatrix(pm):
    n, k = pm.probs.shape
    lines = [f"probmatrix v1 {n} {k}"]
    for sid, row in zip(pm.ids, pm.probs):
        if not sid or any(ch.isspace() for ch in sid):
            raise ValueError(f"sample id {sid!r} must be non-empty without whitespace")
        lines.append(f"{sid} {_format_row(row)}")
    return "\n".join(lines) + "\n"


def parse_probmatrix(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ProbMatrixFormatError("empty probability file")
    head = lines[0].split()
    if len(head) != 4 or head[:2] != ["probmatrix", "v1"]:
        raise ProbMatrixFormatError(f"bad header {lines[0]!r}")
    n, k = int(head[2]), int(head[3])
    if len(lines) - 1 != n:
        raise ProbMatrixFormatError(f"header declares {n} rows, found {len(lines) - 1}")
    ids, rows = [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != k + 1:
            raise ProbMatrixFormatError(f"line {lineno}: expected {k + 1} fields, got {len(parts)}")
        ids.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    probs = np.array(rows, dtype=np.float64).reshape(n, k)
    return ProbMatrix(tuple(ids), probs)


def write_probmatrix(path, pm):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_probmatrix(pm))


def read_probmatrix(path):
    with open(path, encoding="ascii") as fh:
        return parse_probmatrix(fh.read())
