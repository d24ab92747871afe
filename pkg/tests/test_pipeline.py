from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recipekit.imageops.pipeline import (
    AugmentConfig,
    ConfigError,
    MixedTarget,
    augment_batch,
    augment_train,
    cutmix_pair,
    denormalize,
    normalize,
    sample_cutmix_box,
)
from recipekit.imageops.policy import imagenet_policy
from recipekit.rng import RecordingRngStream, RngStream

from .conftest import random_image


def test_mixed_target_validation():
    with pytest.raises(ValueError):
        MixedTarget(((0, 0.5), (1, 0.4)))
    with pytest.raises(ValueError):
        MixedTarget(((0, 0.5), (0, 0.5)))
    with pytest.raises(ValueError):
        MixedTarget(((0, 1.0), (1, 0.0)))
    assert MixedTarget.mix(2, 2, 0.3) == MixedTarget.hard(2)
    assert MixedTarget.mix(1, 2, 0.0).pairs == ((1, 1.0),)
    assert MixedTarget.mix(1, 2, 0.7).dominant == 2
    assert MixedTarget.mix(1, 2, 0.5).dominant == 1
    np.testing.assert_allclose(MixedTarget.mix(0, 2, 0.25).as_vector(3), [0.75, 0, 0.25])


def test_normalize_roundtrip(rng):
    img = random_image(rng)
    cfg = AugmentConfig()
    x = normalize(img, cfg.mean, cfg.std)
    assert x.dtype == np.float32
    np.testing.assert_allclose(denormalize(x, cfg.mean, cfg.std) * 255, img, atol=1e-3)


@pytest.mark.parametrize("kwargs", [
    dict(area_range=(0.0, 1.0)), dict(area_range=(0.5, 0.4)), dict(aspect_range=(2.0, 1.0)),
    dict(flip_prob=1.5), dict(cutmix_alpha=0.0), dict(std=(0.2, 0.0, 0.2)), dict(out_size=0),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AugmentConfig(**kwargs)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32), h=st.integers(2, 40), w=st.integers(2, 40),
       a=st.integers(0, 3), b=st.integers(0, 3))
def test_cutmix_weight_is_pasted_pixel_fraction(seed, h, w, a, b):
    rng = np.random.default_rng(seed)
    base = np.zeros((h, w, 3), np.float32)
    donor = np.ones((h, w, 3), np.float32)
    out, target = cutmix_pair(base, a, donor, b, 1.0, RngStream(seed))
    pasted = int(out[..., 0].sum())
    weights = dict((c, wt) for c, wt in target.pairs)
    if a == b:
        assert target == MixedTarget.hard(a)
    elif pasted == 0:
        assert target.pairs == ((a, 1.0),)
    else:
        assert weights[b] == pasted / (h * w)
        assert weights.get(a, 0.0) == (h * w - pasted) / (h * w)
    del rng


def test_cutmix_forced_full_box_and_zero_patch():
    base = np.zeros((4, 4, 3), np.float32)
    donor = np.ones((4, 4, 3), np.float32)
    out, t = cutmix_pair(base, 0, donor, 1, 1.0, RngStream(0), box=(0, 0, 4, 4))
    assert t.pairs == ((1, 1.0),) and out.min() == 1.0
    out, t = cutmix_pair(base, 0, donor, 1, 1.0, RngStream(0), lam=1.0)
    assert t.pairs == ((0, 1.0),) and out.max() == 0.0


def test_cutmix_box_side_follows_lambda():
    y0, x0, y1, x1 = sample_cutmix_box(100, 100, 0.75, RngStream(1))
    assert (y1 - y0) <= 50 and (x1 - x0) <= 50
    assert 0 <= y0 <= y1 <= 100 and 0 <= x0 <= x1 <= 100


def test_augment_train_draw_order():
    img = np.full((20, 20, 3), 50, np.uint8)
    cfg = AugmentConfig(out_size=8, cutmix_prob=1.0, flip_prob=0.5)
    rng = RecordingRngStream(1, 1)
    out, target = augment_train(img, 0, img, 1, cfg, rng, RngStream(1, 2))
    labels = rng.labels()
    i = labels.index("flip")
    assert labels[:i] and set(labels[:i]) <= {"crop.area", "crop.aspect", "crop.top", "crop.left"}
    assert labels[i + 1 : i + 4] == ["autoaugment.policy", "autoaugment.apply", "autoaugment.apply"]
    assert labels[i + 4 :] == ["cutmix.apply", "cutmix.lambda", "cutmix.cx", "cutmix.cy"]
    assert out.shape == (8, 8, 3) and out.dtype == np.float32


def test_augment_train_trace_records_every_step(rng):
    trace = {}
    augment_train(random_image(rng, 20, 20), 0, random_image(rng, 20, 20), 1,
                  AugmentConfig(out_size=8, cutmix_prob=1.0), RngStream(0), RngStream(1),
                  trace=trace)
    assert set(trace) == {"crop", "flip", "autoaugment", "cutmix"}


def test_augment_batch_is_thread_invariant(rng):
    images = [random_image(rng, 20, 24) for _ in range(6)]
    labels = np.array([0, 1, 2, 0, 1, 2])
    cfg = AugmentConfig(out_size=12, policy=imagenet_policy())

    def run(executor):
        rngs = [RngStream(11, k) for k in range(6)]
        return augment_batch(images, labels, cfg, rngs, executor)

    x1, t1 = run(None)
    with ThreadPoolExecutor(3) as pool:
        x2, t2 = run(pool)
    np.testing.assert_array_equal(x1, x2)
    assert t1 == t2
    assert x1.shape == (6, 12, 12, 3)
    for t in t1:
        assert abs(sum(w for _, w in t.pairs) - 1.0) < 1e-12
