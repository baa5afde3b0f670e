import numpy as np
import pytest

from nfd.datagen import SHAPE_KINDS, Grating, generate, gratings, random_grating, shape_mask, smooth_image
from nfd.errors import InvalidArgument
from nfd.nets import ConvNetConfig, accuracy, train_classifier


@pytest.mark.parametrize("kind", ["blobs", "shapes"])
def test_layout_and_range(kind):
    ds = generate(kind, 3, 4, 8, 2, seed=0)
    assert len(ds) == 12 and ds.labels == [0] * 4 + [1] * 4 + [2] * 4
    arr = ds.array()
    assert arr.shape == (12, 2, 8, 8)
    assert arr.min() >= 0.0 and arr.max() <= 1.0


@pytest.mark.parametrize("kind", ["blobs", "shapes"])
def test_deterministic(kind):
    a = generate(kind, 2, 3, 8, 1, seed=5).array()
    assert np.array_equal(a, generate(kind, 2, 3, 8, 1, seed=5).array())
    assert not np.array_equal(a, generate(kind, 2, 3, 8, 1, seed=6).array())


def test_validation():
    with pytest.raises(InvalidArgument):
        generate("noise", 2, 2, 8, 1, seed=0)
    with pytest.raises(InvalidArgument):
        generate("shapes", len(SHAPE_KINDS) + 1, 2, 8, 1, seed=0)
    with pytest.raises(InvalidArgument):
        generate("blobs", 2, 0, 8, 1, seed=0)
    with pytest.raises(InvalidArgument):
        shape_mask("star", np.random.default_rng(0), 8)


@pytest.mark.parametrize("kind", SHAPE_KINDS)
def test_shape_masks_in_unit_range(kind):
    m = shape_mask(kind, np.random.default_rng(0), 16)
    assert m.shape == (16, 16) and m.min() >= 0.0 and m.max() <= 1.0 and m.std() > 0.05


def test_shapes_are_learnable():
    train = generate("shapes", 3, 20, 16, 3, seed=0)
    test = generate("shapes", 3, 20, 16, 3, seed=1)
    cfg = ConvNetConfig(3, (16, 16), 3, depth=2, width=8)
    params = train_classifier(cfg, train.array(), train.labels, np.random.default_rng(0), epochs=100,
                              lr=3e-3)
    assert accuracy(cfg, params, test.array(), test.labels) > 0.9


def test_smooth_image_range():
    img = smooth_image(np.random.default_rng(0), 16, 3)
    assert img.shape == (3, 16, 16) and img.min() >= 0.0 and img.max() <= 1.0


def test_gratings_sample_any_resolution():
    g = random_grating(np.random.default_rng(0), 3)
    assert isinstance(g, Grating)
    lo, hi = g.sample(16), g.sample(33)
    assert lo.shape == (3, 16, 16) and hi.shape == (3, 33, 33)
    # the two lattices share their corner points
    np.testing.assert_allclose(lo[:, 0, 0], hi[:, 0, 0], atol=1e-12)
    np.testing.assert_allclose(lo[:, -1, -1], hi[:, -1, -1], atol=1e-12)


def test_gratings_deterministic():
    a = [g.sample(8) for g in gratings(3, 1, seed=2)]
    b = [g.sample(8) for g in gratings(3, 1, seed=2)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
