"""
Five-stage encoder producing the feature pyramid consumed by the decoders.

A 3x3 stem keeps full resolution; each stage then opens with a stride-2
block, so a side-S input yields levels of side S/2, S/4, S/8, S/16, S/32.
Blocks are split-attention blocks (backbone "resnest") or plain two-conv
residual blocks (backbone "resnet").
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    BatchNormParams,
    ConvParams,
    ParamGroup,
    conv,
    conv_bn_relu,
    init_batch_norm,
    init_conv,
    norm,
)
from .splat import SplatBlockParams, SplatConfig, init_splat_block, split_attention_forward
from .tensor import Tensor

logger = logging.getLogger(__name__)

NUM_STAGES = 5
DOWNSAMPLE_FACTOR = 2 ** NUM_STAGES
BACKBONES = ("resnest", "resnet")


@dataclass(frozen=True)
class EncoderConfig:
    stage_widths: Tuple[int, ...] = (8, 16, 32, 64, 128)
    stage_blocks: Tuple[int, ...] = (1, 1, 1, 1, 1)
    cardinality: int = 2
    radix: int = 2
    stem_width: int = 8
    backbone: str = "resnest"
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stage_widths) != NUM_STAGES or len(self.stage_blocks) != NUM_STAGES:
            raise ConfigError(
                f"encoder needs exactly {NUM_STAGES} stage widths and block counts, "
                f"got {len(self.stage_widths)} and {len(self.stage_blocks)}"
            )
        if min(self.stage_widths) < 1 or min(self.stage_blocks) < 1 or self.stem_width < 1:
            raise ConfigError("encoder widths and block counts must be positive")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone '{self.backbone}', expected one of {BACKBONES}")
        if self.backbone == "resnest":
            for width in self.stage_widths:
                if width % self.cardinality:
                    raise ConfigError(f"stage width {width} is not divisible by cardinality {self.cardinality}")

    def stage_input_width(self, stage: int) -> int:
        return self.stem_width if stage == 0 else self.stage_widths[stage - 1]


def stage_block_configs(cfg: EncoderConfig) -> List[List[SplatConfig]]:
    """Per-stage block shapes; shared by init, forward and cost accounting"""
    stages = []
    for s in range(NUM_STAGES):
        blocks = []
        in_channels = cfg.stage_input_width(s)
        for b in range(cfg.stage_blocks[s]):
            blocks.append(SplatConfig(
                in_channels=in_channels,
                out_channels=cfg.stage_widths[s],
                cardinality=cfg.cardinality if cfg.backbone == "resnest" else 1,
                radix=cfg.radix if cfg.backbone == "resnest" else 1,
                stride=2 if b == 0 else 1,
            ))
            in_channels = cfg.stage_widths[s]
        stages.append(blocks)
    return stages


@dataclass
class ResidualBlockParams(ParamGroup):
    conv1: ConvParams
    norm1: BatchNormParams
    conv2: ConvParams
    norm2: BatchNormParams
    shortcut: Optional[ConvParams] = None
    shortcut_norm: Optional[BatchNormParams] = None


def init_residual_block(rng: np.random.Generator, cfg: SplatConfig) -> ResidualBlockParams:
    shortcut = shortcut_norm = None
    if cfg.needs_shortcut:
        shortcut = init_conv(rng, cfg.in_channels, cfg.out_channels, 1, stride=cfg.stride, bias=False)
        shortcut_norm = init_batch_norm(cfg.out_channels)
    return ResidualBlockParams(
        conv1=init_conv(rng, cfg.in_channels, cfg.out_channels, 3, stride=cfg.stride, bias=False),
        norm1=init_batch_norm(cfg.out_channels),
        conv2=init_conv(rng, cfg.out_channels, cfg.out_channels, 3, bias=False),
        norm2=init_batch_norm(cfg.out_channels, zero_gamma=True),
        shortcut=shortcut,
        shortcut_norm=shortcut_norm,
    )


def residual_block_forward(x: Tensor, params: ResidualBlockParams, cfg: SplatConfig, training: bool = True) -> Tensor:
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"residual block expects {cfg.in_channels} input channels, got shape {x.shape}")
    h = conv_bn_relu(x, params.conv1, params.norm1, training)
    h = norm(conv(h, params.conv2), params.norm2, training)
    if params.shortcut is not None:
        identity = norm(conv(x, params.shortcut), params.shortcut_norm, training)
    else:
        identity = x
    return identity + h


BlockParams = Union[SplatBlockParams, ResidualBlockParams]


@dataclass
class EncoderParams(ParamGroup):
    stem: ConvParams
    stem_norm: BatchNormParams
    stages: List[List[BlockParams]]


@dataclass
class Pyramid:
    """Encoder outputs: the full-resolution stem map and five downsampled levels"""
    stem: Tensor
    levels: List[Tensor]

    @property
    def bottleneck(self) -> Tensor:
        return self.levels[-1]

    def skip_features(self) -> List[Tensor]:
        """Features by side, finest first: stem, then levels 1..4"""
        return [self.stem] + self.levels[:-1]


def init_encoder(rng: np.random.Generator, cfg: EncoderConfig) -> EncoderParams:
    init_block = init_splat_block if cfg.backbone == "resnest" else init_residual_block
    stages = [[init_block(rng, block) for block in blocks] for blocks in stage_block_configs(cfg)]
    return EncoderParams(
        stem=init_conv(rng, cfg.in_channels, cfg.stem_width, 3, bias=False),
        stem_norm=init_batch_norm(cfg.stem_width),
        stages=stages,
    )


StageHook = Callable[[int, Tensor], Tensor]


def encoder_forward(image: Tensor, params: EncoderParams, cfg: EncoderConfig,
                    training: bool = True, stage_hook: Optional[StageHook] = None) -> Pyramid:
    """Encode image[B, 3, S, S].

    stage_hook(stage, x), when given, may replace the input of each stage
    before its blocks run; the coupled network uses it for cross-UNet fusion.
    """
    if image.ndim != 4 or image.shape[1] != cfg.in_channels:
        raise ShapeError(f"encoder expects {cfg.in_channels}-channel images, got shape {image.shape}")
    side_h, side_w = image.shape[2], image.shape[3]
    if side_h % DOWNSAMPLE_FACTOR or side_w % DOWNSAMPLE_FACTOR:
        raise ShapeError(f"input side must be divisible by {DOWNSAMPLE_FACTOR}, got {side_h}x{side_w}")

    block_forward = split_attention_forward if cfg.backbone == "resnest" else residual_block_forward
    stem = conv_bn_relu(image, params.stem, params.stem_norm, training)
    x = stem
    levels = []
    for s, (blocks, block_cfgs) in enumerate(zip(params.stages, stage_block_configs(cfg))):
        if stage_hook is not None:
            x = stage_hook(s, x)
        for block, block_cfg in zip(blocks, block_cfgs):
            x = block_forward(x, block, block_cfg, training=training)
        levels.append(x)
    return Pyramid(stem=stem, levels=levels)
