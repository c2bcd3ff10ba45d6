"""
Synthetic polyp-like data: a smooth textured background with one to three
filled ellipses of shifted colour and texture. The mask is the union of the
ellipses. Every sample is drawn from its own generator seeded by
(seed, index), so a dataset is reproducible bit for bit.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .backbone import DOWNSAMPLE_FACTOR
from .dataset import SamplePair, resize_bilinear_array
from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

SOURCE_NAME = "synthetic"
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class SyntheticConfig:
    count: int = 200
    side: int = 64
    blobs: Tuple[int, int] = (1, 3)
    eccentricity: Tuple[float, float] = (1.0, 2.0)
    radius: Tuple[float, float] = (0.08, 0.3)
    noise: float = 0.05
    seed: int = 0
    min_coverage: float = 0.01
    max_coverage: float = 0.60

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"synthetic count must be >= 1, got {self.count}")
        if self.side < DOWNSAMPLE_FACTOR or self.side % DOWNSAMPLE_FACTOR:
            raise ConfigError(f"synthetic side must be a multiple of {DOWNSAMPLE_FACTOR}, got {self.side}")
        if not 1 <= self.blobs[0] <= self.blobs[1]:
            raise ConfigError(f"invalid blob count range {self.blobs}")
        if not 1.0 <= self.eccentricity[0] <= self.eccentricity[1]:
            raise ConfigError(f"invalid eccentricity range {self.eccentricity}")
        if not 0.0 <= self.min_coverage < self.max_coverage <= 1.0:
            raise ConfigError(f"invalid coverage bounds {self.min_coverage}..{self.max_coverage}")


def _smooth_noise(rng: np.random.Generator, side: int, cells: int, channels: int) -> np.ndarray:
    coarse = rng.standard_normal((cells, cells, channels))
    return resize_bilinear_array(coarse, side, side)


def _ellipse(rng: np.random.Generator, cfg: SyntheticConfig, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    side = cfg.side
    a = rng.uniform(*cfg.radius) * side
    b = a / rng.uniform(*cfg.eccentricity)
    cy, cx = rng.uniform(0.15, 0.85, size=2) * side
    theta = rng.uniform(0.0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _draw(rng: np.random.Generator, cfg: SyntheticConfig) -> Tuple[np.ndarray, np.ndarray]:
    side = cfg.side
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5

    base = np.array([0.75, 0.45, 0.40]) + rng.uniform(-0.08, 0.08, size=3)
    image = base + 0.06 * _smooth_noise(rng, side, 6, 3) + cfg.noise * rng.standard_normal((side, side, 3))

    mask = np.zeros((side, side), dtype=bool)
    for _ in range(rng.integers(cfg.blobs[0], cfg.blobs[1] + 1)):
        blob = _ellipse(rng, cfg, yy, xx)
        shift = np.array([0.1, -0.15, -0.12]) + rng.uniform(-0.05, 0.05, size=3)
        texture = 0.08 * _smooth_noise(rng, side, 12, 1)
        image = np.where(blob[:, :, None], image + shift + texture, image)
        mask |= blob
    return np.clip(image, 0.0, 1.0), mask.astype(np.uint8)


def synth_sample(cfg: SyntheticConfig, index: int) -> SamplePair:
    rng = np.random.default_rng([cfg.seed, index])
    for _ in range(MAX_ATTEMPTS):
        image, mask = _draw(rng, cfg)
        coverage = mask.mean()
        if cfg.min_coverage <= coverage <= cfg.max_coverage:
            return SamplePair(image=image, mask=mask, source=SOURCE_NAME, sample_id=f"synth_{index:05d}")
    raise DatasetError(f"could not draw sample {index} within coverage bounds after {MAX_ATTEMPTS} attempts")


def synth_generate(cfg: SyntheticConfig) -> List[SamplePair]:
    samples = [synth_sample(cfg, i) for i in range(cfg.count)]
    logger.info(f"generated {len(samples)} synthetic samples of side {cfg.side} (seed {cfg.seed})")
    return samples
