import numpy as np
import pytest

from recipekit.cli.data import load_dataset, make_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=12, w=16):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """4 classes, 12 train / 4 val images per class, 16x16."""
    root = tmp_path_factory.mktemp("tiny")
    make_synthetic(str(root), num_classes=4, per_class=12, val_per_class=4, size=16, seed=7)
    return root


@pytest.fixture(scope="session")
def tiny_val(tiny_data):
    return load_dataset(str(tiny_data / "val.csv"))
