import numpy as np
import pytest

from polypnet.errors import ConfigError
from polypnet.synthetic import SOURCE_NAME, SyntheticConfig, synth_generate, synth_sample


def test_generation_is_reproducible():
    cfg = SyntheticConfig(count=4, side=32, seed=5)
    a, b = synth_generate(cfg), synth_generate(cfg)
    for x, y in zip(a, b):
        assert x.sample_id == y.sample_id
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask, y.mask)


def test_samples_depend_on_seed_and_index():
    cfg = SyntheticConfig(count=2, side=32, seed=0)
    first, second = synth_generate(cfg)
    assert not np.array_equal(first.image, second.image)
    other = synth_sample(SyntheticConfig(count=2, side=32, seed=1), 0)
    assert not np.array_equal(first.image, other.image)
    # a sample does not depend on how many are generated
    np.testing.assert_array_equal(synth_sample(SyntheticConfig(count=10, side=32), 1).image, second.image)


def test_sample_properties():
    cfg = SyntheticConfig(count=20, side=64, seed=2)
    for s in synth_generate(cfg):
        assert s.source == SOURCE_NAME
        assert s.image.shape == (64, 64, 3)
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        assert set(np.unique(s.mask)) <= {0, 1}
        assert cfg.min_coverage <= s.mask.mean() <= cfg.max_coverage


def test_lesions_differ_in_colour():
    s = synth_sample(SyntheticConfig(side=64, noise=0.0, seed=3), 0)
    inside = s.image[s.mask == 1].mean(axis=0)
    outside = s.image[s.mask == 0].mean(axis=0)
    assert inside[0] > outside[0] and inside[1] < outside[1]


@pytest.mark.parametrize("kwargs", [
    {"count": 0}, {"side": 48}, {"blobs": (2, 1)}, {"eccentricity": (0.5, 1.0)},
    {"min_coverage": 0.5, "max_coverage": 0.4},
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        SyntheticConfig(**kwargs)
