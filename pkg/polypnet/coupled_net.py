"""
Coupled attention-gated UNets.

UNet-1 maps the image to an auxiliary probability map p1. Its output is
combined with the raw image (the bridge) and fed to UNet-2, which produces
the final map p2. UNet-2 also receives two kinds of cross-UNet skips:

  * encoder: the input of each UNet-2 encoder stage is concatenated with the
    same-scale UNet-1 encoder feature and projected back by a 1x1 conv;
  * decoder: each UNet-2 decoder level concatenates the same-scale UNet-1
    decoder output next to its own upsampled feature and gated skip.

Each decoder level gates its encoder skip with an attention gate driven by
the coarse decoder feature, unless gates are disabled.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import functional as F
from .attention_gate import AttentionGateParams, attention_gate_forward, init_attention_gate
from .backbone import DOWNSAMPLE_FACTOR, NUM_STAGES, EncoderConfig, EncoderParams, Pyramid, encoder_forward, init_encoder
from .errors import ConfigError, ShapeError
from .layers import BatchNormParams, ConvParams, ParamGroup, conv, conv_bn_relu, init_batch_norm, init_conv
from .tensor import Tensor

logger = logging.getLogger(__name__)

BRIDGE_MODES = ("multiply", "concat")
BRIDGE_SOURCES = ("probability", "logits")

VARIANTS: Dict[str, Dict[str, bool]] = {
    "unet": {"enable_attention_gates": False, "enable_second_unet": False, "enable_cross_connections": False},
    "attention-unet": {"enable_attention_gates": True, "enable_second_unet": False, "enable_cross_connections": False},
    "cunet": {"enable_attention_gates": False, "enable_second_unet": True, "enable_cross_connections": True},
    "ag-cunet": {"enable_attention_gates": True, "enable_second_unet": True, "enable_cross_connections": True},
}


@dataclass(frozen=True)
class CoupledNetConfig:
    input_side: int = 64
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_widths: Tuple[int, ...] = (64, 32, 16, 8, 8)
    enable_attention_gates: bool = True
    enable_cross_connections: bool = True
    enable_second_unet: bool = True
    bridge_mode: str = "multiply"
    bridge_source: str = "probability"
    gate_inter_channels: Optional[int] = None

    def __post_init__(self):
        if self.input_side < DOWNSAMPLE_FACTOR or self.input_side % DOWNSAMPLE_FACTOR:
            raise ConfigError(f"input_side must be a positive multiple of {DOWNSAMPLE_FACTOR}, got {self.input_side}")
        if len(self.decoder_widths) != NUM_STAGES or min(self.decoder_widths) < 1:
            raise ConfigError(f"decoder needs {NUM_STAGES} positive widths, got {self.decoder_widths}")
        if self.bridge_mode not in BRIDGE_MODES:
            raise ConfigError(f"unknown bridge_mode '{self.bridge_mode}', expected one of {BRIDGE_MODES}")
        if self.bridge_source not in BRIDGE_SOURCES:
            raise ConfigError(f"unknown bridge_source '{self.bridge_source}', expected one of {BRIDGE_SOURCES}")

    @classmethod
    def toy(cls, width: int = 8, input_side: int = 64, cardinality: int = 2, radix: int = 2,
            backbone: str = "resnest", **flags) -> "CoupledNetConfig":
        """Desk-scale preset: stage widths w..16w, decoder mirrors them back to w"""
        encoder = EncoderConfig(
            stage_widths=(width, 2 * width, 4 * width, 8 * width, 16 * width),
            stage_blocks=(1, 1, 1, 1, 1),
            cardinality=cardinality,
            radix=radix,
            stem_width=width,
            backbone=backbone,
        )
        return cls(
            input_side=input_side,
            encoder=encoder,
            decoder_widths=(8 * width, 4 * width, 2 * width, width, width),
            **flags,
        )

    def with_variant(self, variant: str) -> "CoupledNetConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{variant}', expected one of {sorted(VARIANTS)}")
        return replace(self, **VARIANTS[variant])

    @property
    def cross_enabled(self) -> bool:
        return self.enable_second_unet and self.enable_cross_connections

    def decoder_input_width(self, level: int) -> int:
        """Channels of the coarse feature entering decoder level (0 = deepest)"""
        return self.encoder.stage_widths[-1] if level == 0 else self.decoder_widths[level - 1]

    def skip_width(self, level: int) -> int:
        return self.encoder.stage_input_width(NUM_STAGES - 1 - level)


@dataclass
class DecoderBlockParams(ParamGroup):
    conv1: ConvParams
    norm1: BatchNormParams
    conv2: ConvParams
    norm2: BatchNormParams

    @property
    def in_channels(self) -> int:
        return self.conv1.in_channels

    @property
    def out_channels(self) -> int:
        return self.conv2.out_channels


@dataclass
class DecoderLevelParams(ParamGroup):
    block: DecoderBlockParams
    gate: Optional[AttentionGateParams] = None


@dataclass
class UNetParams(ParamGroup):
    encoder: EncoderParams
    decoder: List[DecoderLevelParams]
    head: ConvParams


@dataclass
class CoupledNetParams(ParamGroup):
    unet1: UNetParams
    unet2: Optional[UNetParams] = None
    cross: Optional[List[ConvParams]] = None
    bridge: Optional[ConvParams] = None

    def unet1_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.unet1.named_parameters(prefix="unet1."))

    def non_unet1_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_parameters() if not n.startswith("unet1.")]


@dataclass
class UNetOutput:
    probability: Tensor
    logits: Tensor
    pyramid: Pyramid
    decoder_features: List[Tensor]
    attention_maps: List[Tensor]


@dataclass
class NetworkOutput:
    p1: Tensor
    p2: Tensor
    unet1: UNetOutput
    unet2: Optional[UNetOutput] = None

    @property
    def attention_map(self) -> Optional[Tensor]:
        """Coefficient map of the last (finest) gate of the final UNet"""
        final = self.unet2 if self.unet2 is not None else self.unet1
        return final.attention_maps[-1] if final.attention_maps else None


def init_decoder_block(rng: np.random.Generator, in_channels: int, out_channels: int) -> DecoderBlockParams:
    return DecoderBlockParams(
        conv1=init_conv(rng, in_channels, out_channels, 3, bias=False),
        norm1=init_batch_norm(out_channels),
        conv2=init_conv(rng, out_channels, out_channels, 3, bias=False),
        norm2=init_batch_norm(out_channels),
    )


def _init_unet(rng: np.random.Generator, cfg: CoupledNetConfig, with_cross_decoder: bool) -> UNetParams:
    encoder = init_encoder(rng, cfg.encoder)
    decoder = []
    for level in range(NUM_STAGES):
        d_ch, skip_ch, out_ch = cfg.decoder_input_width(level), cfg.skip_width(level), cfg.decoder_widths[level]
        in_ch = d_ch + skip_ch + (out_ch if with_cross_decoder else 0)
        gate = None
        if cfg.enable_attention_gates:
            gate = init_attention_gate(rng, skip_ch, d_ch, cfg.gate_inter_channels)
        decoder.append(DecoderLevelParams(block=init_decoder_block(rng, in_ch, out_ch), gate=gate))
    head = init_conv(rng, cfg.decoder_widths[-1], 1, 1, bias=True)
    return UNetParams(encoder=encoder, decoder=decoder, head=head)


def init_coupled_net(cfg: CoupledNetConfig, rng: np.random.Generator) -> CoupledNetParams:
    unet1 = _init_unet(rng, cfg, with_cross_decoder=False)
    params = CoupledNetParams(unet1=unet1)
    if cfg.enable_second_unet:
        params.unet2 = _init_unet(rng, cfg, with_cross_decoder=cfg.cross_enabled)
        if cfg.cross_enabled:
            params.cross = [
                init_conv(rng, 2 * cfg.encoder.stage_input_width(s), cfg.encoder.stage_input_width(s), 1, bias=False)
                for s in range(NUM_STAGES)
            ]
        if cfg.bridge_mode == "concat":
            params.bridge = init_conv(rng, cfg.encoder.in_channels + 1, cfg.encoder.in_channels, 1, bias=False)
    logger.debug(f"initialised coupled net with {params.num_parameters()} parameters")
    return params


def decoder_block(d: Tensor, skips: List[Tensor], params: DecoderBlockParams, training: bool = True) -> Tensor:
    """Upsample d 2x, concatenate with skips, then two conv3x3-BN-ReLU layers"""
    out_h, out_w = 2 * d.shape[2], 2 * d.shape[3]
    for s in skips:
        if s.ndim != 4 or s.shape[2:] != (out_h, out_w) or s.shape[0] != d.shape[0]:
            raise ShapeError(f"decoder skip {s.shape} does not match upsampled size {out_h}x{out_w}")
    up = F.resample_bilinear(d, out_h, out_w)
    x = F.concat_channels([up] + list(skips))
    if x.shape[1] != params.in_channels:
        raise ShapeError(f"decoder block expects {params.in_channels} channels after concat, got {x.shape[1]}")
    x = conv_bn_relu(x, params.conv1, params.norm1, training)
    return conv_bn_relu(x, params.conv2, params.norm2, training)


def _unet_forward(image: Tensor, params: UNetParams, cfg: CoupledNetConfig, training: bool,
                  stage_hook=None, cross_decoder: Optional[List[Tensor]] = None) -> UNetOutput:
    pyramid = encoder_forward(image, params.encoder, cfg.encoder, training=training, stage_hook=stage_hook)
    skips = pyramid.skip_features()
    d = pyramid.bottleneck
    features, maps = [], []
    for level, level_params in enumerate(params.decoder):
        skip = skips[NUM_STAGES - 1 - level]
        if level_params.gate is not None:
            skip, alpha = attention_gate_forward(skip, d, level_params.gate)
            maps.append(alpha)
        parts = [skip]
        if cross_decoder is not None:
            parts.append(cross_decoder[level])
        d = decoder_block(d, parts, level_params.block, training)
        features.append(d)
    logits = conv(d, params.head)
    return UNetOutput(
        probability=F.sigmoid(logits),
        logits=logits,
        pyramid=pyramid,
        decoder_features=features,
        attention_maps=maps,
    )


def _check_image(image: Tensor, cfg: CoupledNetConfig):
    if image.ndim != 4 or image.shape[1] != cfg.encoder.in_channels:
        raise ShapeError(f"expected images of shape [B, {cfg.encoder.in_channels}, S, S], got {image.shape}")
    if image.shape[2] % DOWNSAMPLE_FACTOR or image.shape[3] % DOWNSAMPLE_FACTOR:
        raise ShapeError(f"image side must be divisible by {DOWNSAMPLE_FACTOR}, got {image.shape[2]}x{image.shape[3]}")


def unet1_forward(image: Tensor, params: CoupledNetParams, cfg: CoupledNetConfig, training: bool = True) -> UNetOutput:
    _check_image(image, cfg)
    return _unet_forward(image, params.unet1, cfg, training)


def bridge_combine(image: Tensor, f1: Tensor, mode: str = "multiply",
                   projection: Optional[ConvParams] = None) -> Tensor:
    """Combine the raw image with UNet-1's single-channel output"""
    if image.ndim != 4 or f1.ndim != 4 or image.shape[2:] != f1.shape[2:] or image.shape[0] != f1.shape[0]:
        raise ShapeError(f"bridge inputs disagree: image {image.shape}, map {f1.shape}")
    if f1.shape[1] != 1:
        raise ShapeError(f"bridge map must have one channel, got {f1.shape[1]}")
    if mode == "multiply":
        return image * f1
    if mode == "concat":
        if projection is None:
            raise ConfigError("concat bridge needs a 1x1 projection")
        return conv(F.concat_channels([image, f1]), projection)
    raise ConfigError(f"unknown bridge mode '{mode}'")


def coupled_forward(image: Tensor, params: CoupledNetParams, cfg: CoupledNetConfig, training: bool = True,
                    unet1_training: Optional[bool] = None) -> NetworkOutput:
    """unet1_training overrides the batch-norm mode of UNet-1 only (None follows training)"""
    first = unet1_forward(image, params, cfg, training if unet1_training is None else unet1_training)
    if not cfg.enable_second_unet:
        return NetworkOutput(p1=first.probability, p2=first.probability, unet1=first)

    f1 = first.probability if cfg.bridge_source == "probability" else first.logits
    bridged = bridge_combine(image, f1, cfg.bridge_mode, params.bridge)

    stage_hook = cross_decoder = None
    if cfg.cross_enabled:
        enc1 = first.pyramid.skip_features()

        def stage_hook(stage: int, x: Tensor) -> Tensor:
            return conv(F.concat_channels([x, enc1[stage]]), params.cross[stage])

        cross_decoder = first.decoder_features

    second = _unet_forward(bridged, params.unet2, cfg, training, stage_hook=stage_hook, cross_decoder=cross_decoder)
    return NetworkOutput(p1=first.probability, p2=second.probability, unet1=first, unet2=second)
