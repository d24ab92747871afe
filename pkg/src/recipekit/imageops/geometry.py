"""Resampling and geometric transforms on ``(H, W, 3)`` images.

All resampling uses half-pixel-centred bilinear interpolation, so identity
transforms reproduce their input exactly.
"""

import math

import numpy as np

from .. import _accel

MAX_CROP_ATTEMPTS = 10


class ImageError(ValueError):
    """Raised for malformed image arrays."""


def check_image(img, dtype=None):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError(f"empty image {img.shape}")
    if dtype is not None and img.dtype != dtype:
        raise ImageError(f"expected dtype {np.dtype(dtype)}, got {img.dtype}")
    return img


def to_u8(values):
    """Round-half-up and clip float pixels into ``uint8``."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def hflip(img):
    """Mirror columns: column ``j`` maps to ``W - 1 - j``."""
    return np.ascontiguousarray(img[:, ::-1, :])


def _grid(out_h, out_w):
    ys, xs = np.meshgrid(
        np.arange(out_h, dtype=np.float64),
        np.arange(out_w, dtype=np.float64),
        indexing="ij",
    )
    return xs, ys


def resample_box(img, top, left, box_h, box_w, out_h, out_w):
    """Bilinear resample of the continuous box onto an ``out_h x out_w`` grid.

    Returns float64 pixels without rounding.  Sample positions are clamped to
    the image, matching crop-then-resize when the box is integer aligned.
    """
    xs, ys = _grid(out_h, out_w)
    sx = box_w / out_w
    sy = box_h / out_h
    xs = left + (xs + 0.5) * sx - 0.5
    ys = top + (ys + 0.5) * sy - 0.5
    return _accel.bilinear_sample(img, xs, ys, clamp=True)


def resize_bilinear(img, new_w, new_h):
    """Resize a ``uint8`` image to ``new_h x new_w``."""
    img = check_image(img)
    if new_w < 1 or new_h < 1:
        raise ImageError(f"target size must be positive, got {new_w}x{new_h}")
    h, w, _ = img.shape
    if (h, w) == (new_h, new_w):
        return img.copy()
    out = resample_box(img, 0.0, 0.0, h, w, new_h, new_w)
    return to_u8(out)


def sample_crop_box(height, width, area_range, aspect_range, rng):
    """Draw an integer crop ``(top, left, h, w)`` for a random resized crop.

    Up to ten proposals are tried.  A proposal is accepted when it fits and
    its integer area fraction lies inside ``area_range``.  Otherwise the
    largest centred crop with aspect clamped into ``aspect_range`` is used.
    """
    area = height * width
    lo_a, hi_a = area_range
    log_lo, log_hi = math.log(aspect_range[0]), math.log(aspect_range[1])
    for _ in range(MAX_CROP_ATTEMPTS):
        target = area * rng.uniform(lo_a, hi_a, label="crop.area")
        aspect = math.exp(rng.uniform(log_lo, log_hi, label="crop.aspect"))
        w = int(round(math.sqrt(target * aspect)))
        h = int(round(math.sqrt(target / aspect)))
        if 0 < w <= width and 0 < h <= height and lo_a <= (w * h) / area <= hi_a:
            top = rng.integers(0, height - h + 1, label="crop.top")
            left = rng.integers(0, width - w + 1, label="crop.left")
            return top, left, h, w
    ratio = width / height
    if ratio < aspect_range[0]:
        w = width
        h = min(height, max(1, int(round(w / aspect_range[0]))))
    elif ratio > aspect_range[1]:
        h = height
        w = min(width, max(1, int(round(h * aspect_range[1]))))
    else:
        w, h = width, height
    return (height - h) // 2, (width - w) // 2, h, w


def random_resized_crop(img, area_range, aspect_range, out_size, rng):
    img = check_image(img, np.uint8)
    top, left, h, w = sample_crop_box(img.shape[0], img.shape[1], area_range, aspect_range, rng)
    crop = img[top : top + h, left : left + w]
    return resize_bilinear(crop, out_size, out_size)


def warp_affine(img, matrix, fill=128.0):
    """Apply an affine map given as its *inverse* (output -> input) 2x3 matrix.

    Coordinates are pixel-centre based, relative to the image centre.
    Output pixels whose source falls outside the image take ``fill``.
    """
    img = check_image(img, np.uint8)
    h, w, _ = img.shape
    xs, ys = _grid(h, w)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    u = xs - cx
    v = ys - cy
    (a, b, tx), (c, d, ty) = matrix
    src_x = a * u + b * v + tx + cx
    src_y = c * u + d * v + ty + cy
    out = _accel.bilinear_sample(img, src_x, src_y, fill=fill, clamp=False)
    return to_u8(out)


def rotate(img, degrees, fill=128.0):
    """Rotate counter-clockwise about the image centre."""
    t = math.radians(degrees)
    cos_t, sin_t = math.cos(t), math.sin(t)
    # inverse of a CCW rotation in y-down image coordinates
    return warp_affine(img, ((cos_t, -sin_t, 0.0), (sin_t, cos_t, 0.0)), fill)


def shear_x(img, factor, fill=128.0):
    return warp_affine(img, ((1.0, factor, 0.0), (0.0, 1.0, 0.0)), fill)


def shear_y(img, factor, fill=128.0):
    return warp_affine(img, ((1.0, 0.0, 0.0), (factor, 1.0, 0.0)), fill)


def translate(img, dx, dy, fill=128.0):
    """Shift content by ``(dx, dy)`` pixels."""
    return warp_affine(img, ((1.0, 0.0, -dx), (0.0, 1.0, -dy)), fill)
