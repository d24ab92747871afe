import json

import numpy as np
import pytest

from recipekit.imageops.policy import (
    POLICY_LENGTH,
    PolicyError,
    autoaugment,
    identity_policy,
    imagenet_policy,
    load_policy,
    parse_policy,
    resolve_policy,
)
from recipekit.rng import RecordingRngStream, RngStream

from .conftest import random_image


def _raw():
    return [[{"op": s.op, "prob": s.prob, "magnitude": s.magnitude} for s in sp.slots]
            for sp in imagenet_policy()]


def test_bundled_policy_has_24_valid_entries():
    table = imagenet_policy()
    assert len(table) == POLICY_LENGTH
    ops = {s.op for sp in table for s in sp.slots}
    assert {"Posterize", "Rotate", "Solarize", "Equalize", "ShearX", "Color"} <= ops


def test_bundled_policy_first_entry():
    first = imagenet_policy()[0]
    assert (first.first.op, first.first.prob, first.first.magnitude) == ("Posterize", 0.4, 4)
    assert (first.second.op, first.second.prob) == ("Rotate", 0.6)
    assert first.second.magnitude == pytest.approx(30.0)


def test_identity_policy_never_changes_images(rng):
    img = random_image(rng)
    for s in range(20):
        np.testing.assert_array_equal(autoaugment(img, identity_policy(), RngStream(s)), img)


def test_autoaugment_draws_policy_then_two_applies(rng):
    r = RecordingRngStream(4, 4)
    autoaugment(random_image(rng), identity_policy(), r)
    assert r.labels() == ["autoaugment.policy", "autoaugment.apply", "autoaugment.apply"]


def test_autoaugment_is_deterministic(rng):
    img = random_image(rng, 16, 16)
    table = imagenet_policy()
    for s in range(10):
        a = autoaugment(img, table, RngStream(9, s))
        b = autoaugment(img, table, RngStream(9, s))
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d[:-1], "24"),
    (lambda d: d + [d[0]], "24"),
    (lambda d: [[{**d[0][0], "op": "Blur"}, d[0][1]]] + d[1:], "unknown op"),
    (lambda d: [[{**d[0][0], "prob": 1.5}, d[0][1]]] + d[1:], "prob"),
    (lambda d: [[{**d[0][0], "magnitude": 99}, d[0][1]]] + d[1:], "magnitude"),
    (lambda d: [[{"op": "Invert", "prob": 0.1}, d[0][1]]] + d[1:], "missing"),
    (lambda d: [[d[0][0]]] + d[1:], "two"),
])
def test_malformed_policies_are_rejected(mutate, msg):
    with pytest.raises(PolicyError, match=msg):
        parse_policy(mutate(_raw()))


def test_load_and_resolve(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(_raw()))
    assert load_policy(str(path)) == imagenet_policy()
    assert resolve_policy(str(path)) == imagenet_policy()
    assert resolve_policy("identity") == identity_policy()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(PolicyError):
        load_policy(str(bad))
