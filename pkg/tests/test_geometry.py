import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recipekit.imageops.geometry import (
    ImageError,
    hflip,
    random_resized_crop,
    resample_box,
    resize_bilinear,
    rotate,
    sample_crop_box,
    shear_x,
    translate,
)
from recipekit.rng import RecordingRngStream, RngStream

from .conftest import random_image


def test_resize_identity_returns_equal_copy(rng):
    img = random_image(rng)
    out = resize_bilinear(img, img.shape[1], img.shape[0])
    np.testing.assert_array_equal(out, img)
    assert out is not img


def test_resize_constant_image_stays_constant():
    img = np.full((7, 9, 3), 93, np.uint8)
    np.testing.assert_array_equal(resize_bilinear(img, 20, 13), np.full((13, 20, 3), 93))


def _bilinear_oracle(img, out_h, out_w):
    h, w, _ = img.shape
    out = np.zeros((out_h, out_w, 3))
    for i in range(out_h):
        for j in range(out_w):
            x = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            x0, y0 = int(math.floor(x)), int(math.floor(y))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = x - x0, y - y0
            for c in range(3):
                top = (1 - fx) * float(img[y0, x0, c]) + fx * float(img[y0, x1, c])
                bot = (1 - fx) * float(img[y1, x0, c]) + fx * float(img[y1, x1, c])
                out[i, j, c] = (1 - fy) * top + fy * bot
    return out


@pytest.mark.parametrize("out_h,out_w", [(12, 12), (3, 5), (7, 16), (1, 1)])
def test_resample_matches_scalar_oracle(rng, out_h, out_w):
    img = random_image(rng, 6, 8)
    np.testing.assert_allclose(resample_box(img, 0, 0, 6, 8, out_h, out_w),
                               _bilinear_oracle(img, out_h, out_w), atol=1e-9)


def test_resize_preserves_linear_ramps():
    ramp = np.broadcast_to((np.arange(8) * 30)[None, :, None], (4, 8, 3)).astype(np.uint8)
    out = resample_box(ramp, 0, 0, 4, 8, 4, 16)
    # interior samples stay on the ramp: x_src = (j + 0.5) / 2 - 0.5
    j = np.arange(1, 15)
    np.testing.assert_allclose(out[0, 1:15, 0], 30 * ((j + 0.5) / 2 - 0.5))


def test_resize_rejects_bad_sizes(rng):
    with pytest.raises(ImageError):
        resize_bilinear(random_image(rng), 0, 4)
    with pytest.raises(ImageError):
        resize_bilinear(np.zeros((4, 4)), 2, 2)


def test_hflip_is_an_involution(rng):
    img = random_image(rng)
    np.testing.assert_array_equal(hflip(hflip(img)), img)
    np.testing.assert_array_equal(hflip(img)[:, 0], img[:, -1])


@settings(max_examples=200, deadline=None)
@given(h=st.integers(1, 64), w=st.integers(1, 64), seed=st.integers(0, 2**32),
       lo=st.floats(0.05, 1.0), aspect_hi=st.floats(1.0, 3.0))
def test_crop_box_fits_and_respects_area_range(h, w, seed, lo, aspect_hi):
    area_range = (lo, 1.0)
    aspect_range = (1 / aspect_hi, aspect_hi)
    rng = RecordingRngStream(seed, 0)
    top, left, ch, cw = sample_crop_box(h, w, area_range, aspect_range, rng)
    assert 0 <= top and top + ch <= h and 0 <= left and left + cw <= w
    assert ch >= 1 and cw >= 1
    if "crop.top" in rng.labels():
        assert lo <= ch * cw / (h * w) <= 1.0
    else:
        # fallback: centred, full along one axis
        assert top == (h - ch) // 2 and left == (w - cw) // 2
        assert ch == h or cw == w


def test_crop_fallback_clamps_aspect():
    class Never:
        def uniform(self, lo, hi, label=None):
            return hi * 10 if label == "crop.area" else 0.0

    top, left, h, w = sample_crop_box(10, 40, (0.5, 1.0), (0.75, 4 / 3), Never())
    assert (h, w) == (10, 13)
    assert (top, left) == (0, 13)


def test_random_resized_crop_is_seeded(rng):
    img = random_image(rng, 30, 40)
    a = random_resized_crop(img, (0.08, 1.0), (0.75, 4 / 3), 16, RngStream(3, 9))
    b = random_resized_crop(img, (0.08, 1.0), (0.75, 4 / 3), 16, RngStream(3, 9))
    assert a.shape == (16, 16, 3) and a.dtype == np.uint8
    np.testing.assert_array_equal(a, b)


def test_zero_transforms_are_identities(rng):
    img = random_image(rng)
    np.testing.assert_array_equal(rotate(img, 0.0), img)
    np.testing.assert_array_equal(shear_x(img, 0.0), img)
    np.testing.assert_array_equal(translate(img, 0.0, 0.0), img)


def test_integer_translation_shifts_and_fills(rng):
    img = random_image(rng, 8, 10)
    out = translate(img, 3.0, -2.0, fill=128.0)
    np.testing.assert_array_equal(out[0:6, 3:], img[2:8, 0:7])
    assert np.all(out[:, :3] == 128) and np.all(out[6:] == 128)


def test_rotate_90_is_counter_clockwise(rng):
    img = random_image(rng, 9, 9)
    np.testing.assert_array_equal(rotate(img, 90.0), np.rot90(img, 1))
    np.testing.assert_array_equal(rotate(img, -90.0), np.rot90(img, -1))


def test_shear_moves_rows_about_the_centre(rng):
    img = random_image(rng, 9, 12)
    out = shear_x(img, 1.0, fill=0.0)
    # the centre row is unchanged; a row k below the centre reads k pixels to the right
    np.testing.assert_array_equal(out[4], img[4])
    np.testing.assert_array_equal(out[5, :-1], img[5, 1:])
    assert math.isclose(out[5, -1].astype(float).sum(), 0.0)
