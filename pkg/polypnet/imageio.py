"""
Image decoding and encoding.

Binary PPM (P6) and PGM (P5) with maxval <= 255 are read and written
natively, bit-exact. Every other format goes through Pillow.
"""

import logging
import os
import re

import numpy as np

from .errors import DatasetError

logger = logging.getLogger(__name__)

NATIVE_EXTENSIONS = (".ppm", ".pgm", ".pnm")
IMAGE_EXTENSIONS = NATIVE_EXTENSIONS + (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def _read_netpbm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    match = _HEADER.match(raw)
    if not match:
        raise DatasetError(f"{path}: not a binary PPM/PGM file")
    magic, width, height, maxval = match.group(1), int(match.group(2)), int(match.group(3)), int(match.group(4))
    if maxval > 255:
        raise DatasetError(f"{path}: 16-bit netpbm files are not supported")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    body = raw[match.end():match.end() + expected]
    if len(body) != expected:
        raise DatasetError(f"{path}: truncated pixel data ({len(body)} of {expected} bytes)")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        pixels = np.round(pixels.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return pixels if channels == 3 else pixels[:, :, 0]


def _read_pillow(path: str) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as e:
        raise DatasetError(f"{path}: Pillow is required to decode this format") from e
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB") if im.mode not in ("L", "1") else im.convert("L"))


def read_image_uint8(path: str) -> np.ndarray:
    """Decode to uint8, H x W (gray) or H x W x 3"""
    if not os.path.isfile(path):
        raise DatasetError(f"cannot read image '{path}': no such file")
    try:
        if path.lower().endswith(NATIVE_EXTENSIONS):
            return _read_netpbm(path)
        return _read_pillow(path)
    except DatasetError:
        raise
    except Exception as e:
        raise DatasetError(f"cannot read image '{path}': {e}") from e


def read_rgb(path: str) -> np.ndarray:
    """H x W x 3 float64 in [0, 1]"""
    pixels = read_image_uint8(path)
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    return pixels.astype(np.float64) / 255.0


def read_mask(path: str) -> np.ndarray:
    """H x W uint8 in {0, 1}; gray values >= 128 are foreground"""
    pixels = read_image_uint8(path)
    if pixels.ndim == 3:
        pixels = pixels.mean(axis=2)
    return (pixels >= 128).astype(np.uint8)


def _write_netpbm(path: str, pixels: np.ndarray):
    magic = b"P6" if pixels.ndim == 3 else b"P5"
    height, width = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + f"\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def write_image_uint8(path: str, pixels: np.ndarray):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise DatasetError(f"{path}: expected uint8 pixels, got {pixels.dtype}")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if path.lower().endswith(NATIVE_EXTENSIONS):
        _write_netpbm(path, pixels)
        return
    try:
        from PIL import Image
    except ImportError as e:
        raise DatasetError(f"{path}: Pillow is required to encode this format") from e
    Image.fromarray(pixels).save(path)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Map reals in [0, 1] to 0..255"""
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_rgb(path: str, image: np.ndarray):
    write_image_uint8(path, to_uint8(image))


def write_mask(path: str, mask: np.ndarray):
    write_image_uint8(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)
