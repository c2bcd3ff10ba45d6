"""
Versioned binary checkpoints.

Layout (all integers little-endian):

    magic            8 bytes  b"AGCUCKPT"
    version          uint32
    header length    uint32, then UTF-8 JSON {"dtype": ..., "metadata": {...}}
    config length    uint32, then UTF-8 `key = value` config text
    tensor count     uint32
    per tensor       uint16 name length, UTF-8 name, uint8 ndim,
                     ndim x uint32 extents, raw little-endian values

Tensor names are prefixed "param:", "buffer:" or "velocity:". Values are
stored as 32-bit floats, or 64-bit when the model runs in double precision,
so a save/load round trip is bit exact.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .config import TrainConfig
from .coupled_net import CoupledNetParams, init_coupled_net
from .errors import CheckpointError, CheckpointMismatchError
from .optim import OptimizerState
from .tensor import precision

logger = logging.getLogger(__name__)

MAGIC = b"AGCUCKPT"
FORMAT_VERSION = 1
DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    config_text: str
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    dtype: str = "float32"
    version: int = FORMAT_VERSION

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_text(self.config_text, origin="checkpoint")


def capture(cfg: TrainConfig, params: CoupledNetParams, optimizer: Optional[OptimizerState] = None,
            **metadata) -> Checkpoint:
    param_arrays = {name: t.data.copy() for name, t in params.named_parameters()}
    dtype = "float64" if any(a.dtype == np.float64 for a in param_arrays.values()) else "float32"
    return Checkpoint(
        config_text=cfg.to_text(),
        params=param_arrays,
        buffers={name: a.copy() for name, a in params.named_buffers()},
        velocities=optimizer.velocity_dict() if optimizer is not None else {},
        metadata=dict(metadata),
        dtype=dtype,
    )


def _pack_tensor(name: str, values: np.ndarray, dtype: str) -> bytes:
    encoded = name.encode("utf-8")
    head = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", values.ndim)
    head += struct.pack(f"<{values.ndim}I", *values.shape)
    return head + np.ascontiguousarray(values, dtype=DTYPES[dtype]).tobytes()


def save_checkpoint(path: str, ckpt: Checkpoint):
    header = json.dumps({"dtype": ckpt.dtype, "metadata": ckpt.metadata}, sort_keys=True).encode("utf-8")
    config = ckpt.config_text.encode("utf-8")
    tensors = (
        [(f"param:{n}", a) for n, a in ckpt.params.items()]
        + [(f"buffer:{n}", a) for n, a in ckpt.buffers.items()]
        + [(f"velocity:{n}", a) for n, a in ckpt.velocities.items()]
    )
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<I", ckpt.version))
        f.write(struct.pack("<I", len(header)) + header)
        f.write(struct.pack("<I", len(config)) + config)
        f.write(struct.pack("<I", len(tensors)))
        for name, values in tensors:
            f.write(_pack_tensor(name, values, ckpt.dtype))
    os.replace(tmp, path)
    logger.info(f"saved checkpoint {path} ({len(ckpt.params)} parameters, {ckpt.dtype})")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint '{path}' not found")
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    header = json.loads(r.take(n).decode("utf-8"))
    dtype = header.get("dtype", "float32")
    if dtype not in DTYPES:
        raise CheckpointError(f"{path}: unsupported dtype '{dtype}'")
    (n,) = r.unpack("<I")
    config_text = r.take(n).decode("utf-8")

    sections = {"param": {}, "buffer": {}, "velocity": {}}
    (count,) = r.unpack("<I")
    item_size = np.dtype(DTYPES[dtype]).itemsize
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(r.take(size * item_size), dtype=DTYPES[dtype]).reshape(shape)
        kind, _, key = name.partition(":")
        if kind not in sections:
            raise CheckpointError(f"{path}: unknown tensor section in '{name}'")
        sections[kind][key] = values.astype(dtype)
    return Checkpoint(
        config_text=config_text,
        params=sections["param"],
        buffers=sections["buffer"],
        velocities=sections["velocity"],
        metadata=header.get("metadata", {}),
        dtype=dtype,
        version=version,
    )


def apply_checkpoint(ckpt: Checkpoint, params: CoupledNetParams):
    """Copy checkpoint values into params; raise with a name diff on any mismatch"""
    model = dict(params.named_parameters())
    buffers = dict(params.named_buffers())
    missing = sorted(set(model) - set(ckpt.params)) + sorted(set(buffers) - set(ckpt.buffers))
    unexpected = sorted(set(ckpt.params) - set(model)) + sorted(set(ckpt.buffers) - set(buffers))
    mismatched = [
        (name, model[name].shape, ckpt.params[name].shape)
        for name in sorted(set(model) & set(ckpt.params))
        if model[name].shape != ckpt.params[name].shape
    ]
    if missing or unexpected or mismatched:
        raise CheckpointMismatchError(missing, unexpected, mismatched)
    for name, t in model.items():
        t.data = ckpt.params[name].copy()
    for name, arr in buffers.items():
        arr[...] = ckpt.buffers[name]


def restore_model(path: str) -> Tuple[TrainConfig, CoupledNetParams, Checkpoint]:
    """Rebuild the network described by a checkpoint's embedded config and load its weights"""
    ckpt = load_checkpoint(path)
    cfg = ckpt.config
    mode = "double" if ckpt.dtype == "float64" else "single"
    with precision(mode):
        params = init_coupled_net(cfg.model_config(), np.random.default_rng([cfg.seed, 0]))
    apply_checkpoint(ckpt, params)
    logger.info(f"restored checkpoint {path} (metadata {ckpt.metadata})")
    return cfg, params, ckpt
