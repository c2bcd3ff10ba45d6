"""
The fixed twelve-variant augmentation recipe.

Geometric variants (rotations, flips, rescales) transform image and mask
identically. Photometric variants (blur, brighten, darken) touch the image
only. Rotations follow np.rot90 with a negative turn count, which is a
counter-clockwise turn when the row axis points up (origin bottom-left):
the mask [[1, 0], [0, 0]] becomes [[0, 1], [0, 0]] after 90 degrees.

Rescaled variants are mapped back to the original frame by centre crop
(factor > 1) or zero padding (factor < 1).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .dataset import SamplePair, resize_bilinear_array, resize_nearest

logger = logging.getLogger(__name__)

ROTATIONS = (90, 180, 270)
SCALES = (0.9, 1.1, 1.15, 1.2)
BLUR_SIGMA = 1.0
BLUR_KERNEL = 5
BRIGHTEN_ALPHA = 1.5
DARKEN_ALPHA = 0.5

Transform = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def rotate(values: np.ndarray, degrees: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(values, k=-(degrees // 90), axes=(0, 1)))


def _reframe(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Centre-crop or zero-pad the leading two axes to height x width"""
    out = np.zeros((height, width) + values.shape[2:], dtype=values.dtype)
    h, w = values.shape[:2]
    src_r, dst_r = max((h - height) // 2, 0), max((height - h) // 2, 0)
    src_c, dst_c = max((w - width) // 2, 0), max((width - w) // 2, 0)
    rows, cols = min(h, height), min(w, width)
    out[dst_r:dst_r + rows, dst_c:dst_c + cols] = values[src_r:src_r + rows, src_c:src_c + cols]
    return out


def rescale_image(image: np.ndarray, factor: float) -> np.ndarray:
    h, w = image.shape[:2]
    resized = resize_bilinear_array(image, int(round(h * factor)), int(round(w * factor)))
    return np.clip(_reframe(resized, h, w), 0.0, 1.0)


def rescale_mask(mask: np.ndarray, factor: float) -> np.ndarray:
    h, w = mask.shape
    return _reframe(resize_nearest(mask, int(round(h * factor)), int(round(w * factor))), h, w)


def blur(image: np.ndarray) -> np.ndarray:
    """Gaussian blur with a 5x5 support (sigma 1, reflected borders)"""
    truncate = (BLUR_KERNEL // 2) / BLUR_SIGMA
    return ndimage.gaussian_filter(image, sigma=(BLUR_SIGMA, BLUR_SIGMA, 0), truncate=truncate, mode="reflect")


def brighten(image: np.ndarray, alpha: float = BRIGHTEN_ALPHA) -> np.ndarray:
    return np.clip(image * alpha, 0.0, 1.0)


def darken(image: np.ndarray, alpha: float = DARKEN_ALPHA) -> np.ndarray:
    """Contract intensities toward the image mean"""
    mean = image.mean()
    return np.clip(mean + alpha * (image - mean), 0.0, 1.0)


def _geometric(fn_image, fn_mask) -> Transform:
    return lambda image, mask: (fn_image(image), fn_mask(mask))


def _photometric(fn) -> Transform:
    return lambda image, mask: (fn(image), mask.copy())


def _build_recipe() -> Dict[str, Transform]:
    recipe: Dict[str, Transform] = {}
    for deg in ROTATIONS:
        recipe[f"rot{deg}"] = _geometric(lambda v, d=deg: rotate(v, d), lambda v, d=deg: rotate(v, d))
    recipe["flip_h"] = _geometric(lambda v: np.ascontiguousarray(v[:, ::-1]), lambda v: np.ascontiguousarray(v[:, ::-1]))
    recipe["flip_v"] = _geometric(lambda v: np.ascontiguousarray(v[::-1]), lambda v: np.ascontiguousarray(v[::-1]))
    for f in SCALES:
        recipe[f"scale{f:g}"] = _geometric(lambda v, f=f: rescale_image(v, f), lambda v, f=f: rescale_mask(v, f))
    recipe["blur"] = _photometric(blur)
    recipe["brighten"] = _photometric(brighten)
    recipe["darken"] = _photometric(darken)
    return recipe


RECIPE = _build_recipe()
GEOMETRIC_VARIANTS = tuple(name for name in RECIPE if name not in ("blur", "brighten", "darken"))


def mask_transform(name: str, mask: np.ndarray) -> np.ndarray:
    """Apply the geometric part of a variant to a mask alone"""
    return RECIPE[name](np.zeros(mask.shape + (3,)), mask)[1]


def augment(sample: SamplePair) -> List[SamplePair]:
    """Exactly twelve variants of one sample, in recipe order"""
    variants = []
    for name, transform in RECIPE.items():
        image, mask = transform(sample.image, sample.mask)
        variants.append(SamplePair(image=image, mask=mask.astype(sample.mask.dtype),
                                   source=sample.source, sample_id=f"{sample.sample_id}__{name}"))
    return variants


def augment_dataset(samples: Sequence[SamplePair], include_original: bool = True, workers: int = 1) -> List[SamplePair]:
    """Originals followed by their variants, in input order"""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(augment, samples))
    else:
        groups = [augment(s) for s in samples]
    out = []
    for sample, variants in zip(samples, groups):
        if include_original:
            out.append(sample)
        out.extend(variants)
    logger.info(f"augmented {len(samples)} samples into {len(out)}")
    return out
