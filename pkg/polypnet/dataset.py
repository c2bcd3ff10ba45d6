"""
Image/mask datasets.

A dataset directory holds images/ and masks/ whose files pair up by
basename (extension ignored). Ordering is lexicographic by sample id.
"""

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .backbone import DOWNSAMPLE_FACTOR
from .errors import DatasetError, ShapeError
from .functional import bilinear_matrix
from .imageio import IMAGE_EXTENSIONS, read_mask, read_rgb, write_mask, write_rgb

logger = logging.getLogger(__name__)

IMAGES_DIR = "images"
MASKS_DIR = "masks"


@dataclass
class SamplePair:
    image: np.ndarray
    mask: np.ndarray
    source: str = ""
    sample_id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DatasetError(f"sample '{self.sample_id}': image must be H x W x 3, got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise DatasetError(
                f"sample '{self.sample_id}': mask {self.mask.shape} does not match image {self.image.shape[:2]}"
            )
        if not np.isin(self.mask, (0, 1)).all():
            raise DatasetError(f"sample '{self.sample_id}': mask is not binary")

    @property
    def side(self) -> Tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: str
    mask_path: str


@dataclass
class DatasetManifest:
    source: str
    entries: List[ManifestEntry]
    checksum: str = ""

    def __post_init__(self):
        if not self.checksum:
            self.checksum = manifest_checksum(self.entries)

    @property
    def ids(self) -> List[str]:
        return [e.sample_id for e in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass
class PairingReport:
    orphan_images: List[str] = field(default_factory=list)
    orphan_masks: List[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.orphan_images) + len(self.orphan_masks)


@dataclass
class LoadedDataset:
    manifest: DatasetManifest
    samples: List[SamplePair]
    pairing: PairingReport


def manifest_checksum(entries: Sequence[ManifestEntry]) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(f"{e.sample_id}\t{os.path.basename(e.image_path)}\t{os.path.basename(e.mask_path)}\n".encode("utf-8"))
    return h.hexdigest()


def _index_dir(directory: str) -> Dict[str, str]:
    if not os.path.isdir(directory):
        raise DatasetError(f"missing directory '{directory}'")
    found = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in IMAGE_EXTENSIONS:
            continue
        if stem in found:
            raise DatasetError(f"duplicate basename '{stem}' in {directory}")
        found[stem] = os.path.join(directory, name)
    return found


def build_manifest(root: str, source: str = "") -> Tuple[DatasetManifest, PairingReport]:
    images = _index_dir(os.path.join(root, IMAGES_DIR))
    masks = _index_dir(os.path.join(root, MASKS_DIR))
    paired = sorted(set(images) & set(masks))
    report = PairingReport(
        orphan_images=sorted(set(images) - set(masks)),
        orphan_masks=sorted(set(masks) - set(images)),
    )
    if report.count:
        logger.warning(
            f"{root}: excluded {len(report.orphan_images)} images without masks "
            f"and {len(report.orphan_masks)} masks without images"
        )
    entries = [ManifestEntry(i, images[i], masks[i]) for i in paired]
    return DatasetManifest(source=source or os.path.basename(os.path.normpath(root)), entries=entries), report


def load_sample(entry: ManifestEntry, source: str) -> SamplePair:
    return SamplePair(
        image=read_rgb(entry.image_path),
        mask=read_mask(entry.mask_path),
        source=source,
        sample_id=entry.sample_id,
    )


def load_dataset(root: str, source: str = "", workers: int = 1) -> LoadedDataset:
    """Pair, decode and validate every sample under root (images/, masks/)"""
    manifest, report = build_manifest(root, source)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda e: load_sample(e, manifest.source), manifest.entries))
    else:
        samples = [load_sample(e, manifest.source) for e in manifest.entries]
    logger.info(f"loaded {len(samples)} samples from {root} (source '{manifest.source}', checksum {manifest.checksum[:12]})")
    return LoadedDataset(manifest=manifest, samples=samples, pairing=report)


def resize_bilinear_array(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an H x W x C array (align-corners=false)"""
    if image.shape[:2] == (height, width):
        return image.copy()
    mh = bilinear_matrix(image.shape[0], height)
    mw = bilinear_matrix(image.shape[1], width)
    return np.einsum("oh,hwc,pw->opc", mh, image, mw)


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def resize_nearest(values: np.ndarray, height: int, width: int) -> np.ndarray:
    return values[nearest_indices(values.shape[0], height)][:, nearest_indices(values.shape[1], width)]


def resize_pair(sample: SamplePair, side: int) -> SamplePair:
    """Bilinear image, nearest-neighbour mask, both to side x side"""
    if side < DOWNSAMPLE_FACTOR or side % DOWNSAMPLE_FACTOR:
        raise ShapeError(f"target side must be a multiple of {DOWNSAMPLE_FACTOR}, got {side}")
    if sample.side == (side, side):
        return sample
    return SamplePair(
        image=np.clip(resize_bilinear_array(sample.image, side, side), 0.0, 1.0),
        mask=resize_nearest(sample.mask, side, side),
        source=sample.source,
        sample_id=sample.sample_id,
    )


def write_dataset(root: str, samples: Sequence[SamplePair], extension: str = ".ppm"):
    """Write samples in the images/ + masks/ layout"""
    mask_ext = ".pgm" if extension == ".ppm" else extension
    for s in samples:
        write_rgb(os.path.join(root, IMAGES_DIR, f"{s.sample_id}{extension}"), s.image)
        write_mask(os.path.join(root, MASKS_DIR, f"{s.sample_id}{mask_ext}"), s.mask)
    logger.info(f"wrote {len(samples)} samples to {root}")


def stack_batch(samples: Sequence[SamplePair]) -> Tuple[np.ndarray, np.ndarray]:
    """(images [B, 3, H, W], masks [B, 1, H, W]) as float64 arrays"""
    images = np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float64)
    masks = np.stack([s.mask[None] for s in samples]).astype(np.float64)
    return images, masks


def manifest_from_samples(source: str, samples: Sequence[SamplePair]) -> DatasetManifest:
    """Manifest for in-memory samples (no backing files)"""
    entries = [ManifestEntry(s.sample_id, "", "") for s in sorted(samples, key=lambda s: s.sample_id)]
    return DatasetManifest(source=source, entries=entries)
