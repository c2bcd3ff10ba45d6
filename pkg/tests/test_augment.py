import numpy as np

from polypnet.augment import (
    GEOMETRIC_VARIANTS,
    RECIPE,
    augment,
    augment_dataset,
    blur,
    brighten,
    darken,
    mask_transform,
    rescale_mask,
    rotate,
)
from polypnet.dataset import SamplePair

EXPECTED_ORDER = [
    "rot90", "rot180", "rot270", "flip_h", "flip_v",
    "scale0.9", "scale1.1", "scale1.15", "scale1.2",
    "blur", "brighten", "darken",
]


def test_recipe_order():
    assert list(RECIPE) == EXPECTED_ORDER
    assert len(GEOMETRIC_VARIANTS) == 9


def test_twelve_variants(rng, make_sample):
    sample = make_sample(rng, side=32, sample_id="s")
    variants = augment(sample)
    assert [v.sample_id for v in variants] == [f"s__{name}" for name in EXPECTED_ORDER]
    for v in variants:
        assert v.image.shape == sample.image.shape
        assert v.mask.shape == sample.mask.shape
        assert set(np.unique(v.mask)) <= {0, 1}
        assert 0.0 <= v.image.min() and v.image.max() <= 1.0


def test_rotation_direction():
    mask = np.array([[1, 0], [0, 0]])
    np.testing.assert_array_equal(rotate(mask, 90), [[0, 1], [0, 0]])
    np.testing.assert_array_equal(rotate(rotate(mask, 90), 270), mask)
    np.testing.assert_array_equal(rotate(mask, 180), [[0, 0], [0, 1]])


def test_geometric_variants_move_image_and_mask_together(rng):
    mask = (rng.random((32, 32)) > 0.7).astype(np.uint8)
    # image channel 0 carries the mask so any geometric mismatch shows up
    image = np.stack([mask.astype(np.float64), rng.random((32, 32)), rng.random((32, 32))], axis=2)
    sample = SamplePair(image=image, mask=mask, sample_id="m")
    for name, variant in zip(EXPECTED_ORDER, augment(sample)):
        if name in ("rot90", "rot180", "rot270", "flip_h", "flip_v"):
            np.testing.assert_array_equal(variant.image[:, :, 0], variant.mask)
        if name in GEOMETRIC_VARIANTS:
            np.testing.assert_array_equal(variant.mask, mask_transform(name, mask))


def test_photometric_variants_keep_mask(rng, make_sample):
    sample = make_sample(rng, side=32)
    for v in augment(sample)[-3:]:
        np.testing.assert_array_equal(v.mask, sample.mask)


def test_rescale_keeps_frame():
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[5:15, 5:15] = 1
    shrunk = rescale_mask(mask, 0.9)
    grown = rescale_mask(mask, 1.2)
    assert shrunk.shape == grown.shape == (20, 20)
    assert shrunk.sum() < mask.sum() < grown.sum()


def test_photometric_ops(rng):
    image = rng.random((16, 16, 3)) * 0.6
    assert brighten(image).mean() > image.mean()
    assert darken(image).std() < image.std()
    np.testing.assert_allclose(darken(image).mean(), image.mean(), atol=1e-9)
    flat = np.full((8, 8, 3), 0.3)
    np.testing.assert_allclose(blur(flat), flat)
    assert blur(image).std() < image.std()


def test_augment_dataset_layout(rng, make_sample):
    samples = [make_sample(rng, side=32, sample_id=f"s{i}") for i in range(2)]
    out = augment_dataset(samples)
    assert len(out) == 26
    assert out[0] is samples[0] and out[13] is samples[1]
    assert len(augment_dataset(samples, include_original=False)) == 24
    threaded = augment_dataset(samples, workers=2)
    assert [s.sample_id for s in threaded] == [s.sample_id for s in out]
