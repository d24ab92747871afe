"""The fourteen AutoAugment image operations on ``uint8`` RGB images.

Magnitudes are absolute values (degrees, shear factor, enhancement factor,
bits, threshold); legal ranges live in :data:`MAGNITUDE_RANGE`.  Geometric
operations draw a random sign for their magnitude from the supplied stream.
"""

import numpy as np

from . import geometry
from .geometry import check_image, to_u8

FILL = 128.0

OP_KINDS = (
    "ShearX", "ShearY", "TranslateX", "TranslateY", "Rotate",
    "Color", "Posterize", "Solarize", "Contrast", "Sharpness",
    "Brightness", "AutoContrast", "Equalize", "Invert",
)

# None: the operation takes no magnitude and ignores it.
# TranslateX/Y magnitudes are fractions of the image width/height.
MAGNITUDE_RANGE = {
    "ShearX": (0.0, 1.0),
    "ShearY": (0.0, 1.0),
    "TranslateX": (0.0, 1.0),
    "TranslateY": (0.0, 1.0),
    "Rotate": (0.0, 180.0),
    "Color": (0.0, 2.0),
    "Posterize": (1, 8),
    "Solarize": (0.0, 256.0),
    "Contrast": (0.0, 2.0),
    "Sharpness": (0.0, 2.0),
    "Brightness": (0.0, 2.0),
    "AutoContrast": None,
    "Equalize": None,
    "Invert": None,
}

GEOMETRIC = frozenset({"ShearX", "ShearY", "TranslateX", "TranslateY", "Rotate"})


def check_magnitude(kind, magnitude):
    if kind not in MAGNITUDE_RANGE:
        raise ValueError(f"unknown operation {kind!r}")
    rng_ = MAGNITUDE_RANGE[kind]
    if rng_ is None:
        return
    lo, hi = rng_
    if not (lo <= magnitude <= hi):
        raise ValueError(f"{kind} magnitude {magnitude} outside [{lo}, {hi}]")
    if kind == "Posterize" and int(magnitude) != magnitude:
        raise ValueError(f"Posterize bits must be an integer, got {magnitude}")


def grayscale(img):
    """ITU-R 601-2 luma, rounded to the nearest integer level."""
    f = img.astype(np.float64)
    luma = f[..., 0] * 0.299 + f[..., 1] * 0.587 + f[..., 2] * 0.114
    return to_u8(luma)


def blend(degenerate, img, factor):
    """``degenerate + factor * (img - degenerate)``, clipped to ``uint8``."""
    d = degenerate.astype(np.float64)
    return to_u8(d + factor * (img.astype(np.float64) - d))


def color(img, factor):
    gray = grayscale(img)
    return blend(np.repeat(gray[..., None], 3, axis=2), img, factor)


def contrast(img, factor):
    mean = np.floor(grayscale(img).mean() + 0.5)
    return blend(np.full(img.shape, mean), img, factor)


def brightness(img, factor):
    return blend(np.zeros(img.shape), img, factor)


def sharpness(img, factor):
    """Blend with a 3x3 smoothed copy; the one-pixel border is not smoothed."""
    h, w, _ = img.shape
    smooth = img.copy()
    if h > 2 and w > 2:
        f = img.astype(np.float64)
        acc = np.zeros((h - 2, w - 2, 3))
        for di in range(3):
            for dj in range(3):
                weight = 5.0 if (di, dj) == (1, 1) else 1.0
                acc += weight * f[di : di + h - 2, dj : dj + w - 2]
        smooth[1:-1, 1:-1] = to_u8(acc / 13.0)
    return blend(smooth, img, factor)


def posterize(img, bits):
    mask = np.uint8((0xFF << (8 - int(bits))) & 0xFF)
    return img & mask


def solarize(img, threshold):
    return np.where(img >= threshold, 255 - img, img).astype(np.uint8)


def invert(img):
    return (255 - img).astype(np.uint8)


def autocontrast(img):
    out = img.copy()
    for ch in range(3):
        plane = img[..., ch]
        lo, hi = int(plane.min()), int(plane.max())
        if hi > lo:
            scaled = (plane.astype(np.float64) - lo) * (255.0 / (hi - lo))
            out[..., ch] = to_u8(scaled)
    return out


def equalize(img):
    """Per-channel histogram equalisation with a lookup table."""
    out = img.copy()
    for ch in range(3):
        plane = img[..., ch]
        hist = np.bincount(plane.ravel(), minlength=256)
        nonzero = np.flatnonzero(hist)
        step = (hist.sum() - hist[nonzero[-1]]) // 255
        if step == 0:
            continue
        lut = (np.cumsum(hist) - hist + step // 2) // step
        out[..., ch] = np.clip(lut, 0, 255).astype(np.uint8)[plane]
    return out


def apply_op(kind, magnitude, img, rng):
    """Apply one operation.  Magnitudes are validated when a policy is loaded."""
    img = check_image(img, np.uint8)
    if kind in GEOMETRIC:
        sign = -1.0 if rng.random(label=f"op.{kind}.sign") < 0.5 else 1.0
        m = sign * float(magnitude)
        h, w, _ = img.shape
        if kind == "ShearX":
            return geometry.shear_x(img, m, FILL)
        if kind == "ShearY":
            return geometry.shear_y(img, m, FILL)
        if kind == "TranslateX":
            return geometry.translate(img, m * w, 0.0, FILL)
        if kind == "TranslateY":
            return geometry.translate(img, 0.0, m * h, FILL)
        return geometry.rotate(img, m, FILL)
    if kind == "Color":
        return color(img, magnitude)
    if kind == "Posterize":
        return posterize(img, magnitude)
    if kind == "Solarize":
        return solarize(img, magnitude)
    if kind == "Contrast":
        return contrast(img, magnitude)
    if kind == "Sharpness":
        return sharpness(img, magnitude)
    if kind == "Brightness":
        return brightness(img, magnitude)
    if kind == "AutoContrast":
        return autocontrast(img)
    if kind == "Equalize":
        return equalize(img)
    if kind == "Invert":
        return invert(img)
    raise ValueError(f"unknown operation {kind!r}")
