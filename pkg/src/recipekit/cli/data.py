"""Dataset manifests, image loading and the synthetic desk-scale dataset."""

import colorsys
import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from ..imageops.geometry import ImageError
from ..imageops.ppm import read_ppm, write_ppm
from ..rng import RngStream, text_stream_id

MANIFEST_HEADER = ("sample_id", "path", "class_index")


class DatasetError(ValueError):
    """Raised for malformed manifests or unreadable images."""


@dataclass
class Dataset:
    ids: list
    images: list
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)

    def concat(self, other):
        return Dataset(self.ids + other.ids, self.images + other.images,
                       np.concatenate([self.labels, other.labels]))


def write_manifest(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for row in rows:
            w.writerow(row)


def read_manifest(path, num_classes=None):
    """Rows ``(sample_id, absolute path, class)``, validated."""
    base = os.path.dirname(os.path.abspath(path))
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(h.strip() for h in header or ()) != MANIFEST_HEADER:
            raise DatasetError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        rows, seen = [], set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
            sid, rel, cls = (x.strip() for x in rec)
            if sid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate sample id {sid!r}")
            seen.add(sid)
            try:
                c = int(cls)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad class index {cls!r}") from None
            if c < 0 or (num_classes is not None and c >= num_classes):
                raise DatasetError(f"{path}:{lineno}: class {c} outside [0, {num_classes})")
            full = rel if os.path.isabs(rel) else os.path.join(base, rel)
            if not os.path.isfile(full):
                raise DatasetError(f"{path}:{lineno}: image not found: {full}")
            rows.append((sid, full, c))
    return rows


def load_dataset(path, num_classes=None):
    rows = read_manifest(path, num_classes)
    images = []
    for sid, full, _ in rows:
        try:
            images.append(read_ppm(full))
        except (OSError, ImageError) as exc:
            raise DatasetError(f"sample {sid}: {exc}") from None
    labels = np.array([c for _, _, c in rows], dtype=np.int64)
    return Dataset([sid for sid, _, _ in rows], images, labels)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

N_MOTIFS = 2  # horizontal stripes, vertical stripes


def synthetic_image(label, num_classes, size, rng):
    """Striped texture; classes pair up on a shared hue and differ by stripe axis.

    Colour alone therefore identifies a class pair but not the class.
    """
    n_hues = math.ceil(num_classes / N_MOTIFS)
    hue_idx, motif = divmod(label, N_MOTIFS)
    hue = (hue_idx / n_hues + rng.uniform(-0.02, 0.02)) % 1.0
    sat = rng.uniform(0.55, 0.85)
    val = rng.uniform(0.65, 0.9)
    light = np.array(colorsys.hsv_to_rgb(hue, sat, val)) * 255.0
    dark = light * 0.45
    period = rng.integers(5, 9)
    phase = rng.uniform(0.0, period)
    coord = np.arange(size, dtype=np.float64)
    stripe = ((coord + phase) % period) < period / 2.0
    if motif == 0:
        mask = np.repeat(stripe[:, None], size, axis=1)
    else:
        mask = np.repeat(stripe[None, :], size, axis=0)
    img = np.where(mask[..., None], light, dark)
    img = img + rng.normal((size, size, 3), scale=10.0)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def make_synthetic(outdir, num_classes=10, per_class=200, val_per_class=50, size=32, seed=0):
    """Write PPM images plus ``train.csv`` / ``val.csv`` manifests into ``outdir``."""
    if num_classes < 2:
        raise DatasetError(f"need at least two classes, got {num_classes}")
    manifests = {}
    for split, count in (("train", per_class), ("val", val_per_class)):
        img_dir = os.path.join(outdir, "images", split)
        os.makedirs(img_dir, exist_ok=True)
        rows = []
        for c in range(num_classes):
            for i in range(count):
                sid = f"{split}-c{c:03d}-{i:05d}"
                rng = RngStream(seed, text_stream_id("synthetic", split, c, i))
                rel = os.path.join("images", split, f"{sid}.ppm")
                write_ppm(os.path.join(outdir, rel), synthetic_image(c, num_classes, size, rng))
                rows.append((sid, rel, c))
        path = os.path.join(outdir, f"{split}.csv")
        write_manifest(path, rows)
        manifests[split] = path
    with open(os.path.join(outdir, "dataset.cfg"), "w", encoding="utf-8") as fh:
        fh.write(f"train_manifest=train.csv\nval_manifest=val.csv\n"
                 f"num_classes={num_classes}\nimage_size={size}\n")
    return manifests


def mean_color_features(images):
    return np.array([img.reshape(-1, 3).mean(axis=0) for img in images])


def centroid_baseline(train, val):
    """Top-1 of a nearest-centroid classifier on per-image mean colour."""
    xf = mean_color_features(train.images)
    classes = np.unique(train.labels)
    centroids = np.array([xf[train.labels == c].mean(axis=0) for c in classes])
    vf = mean_color_features(val.images)
    d = ((vf[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d, axis=1)]
    return float(np.mean(pred == val.labels))
