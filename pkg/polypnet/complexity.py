"""
Analytic FLOP and parameter accounting for a CoupledNetConfig.

Counting rules (B = batch, per output element unless noted):

    convolution      2 * B * Cout * H' * W' * Cin * kh * kw   (bias not counted)
    fully connected  2 * B * Cin * Cout
    batch norm       4
    relu             1
    sigmoid          4
    softmax          3
    global avg pool  1 per input element
    bilinear resize  7
    add / multiply   1

Parameters are counted exactly as the initialisers create them, so
estimate_flops_params(cfg).params equals init_coupled_net(cfg).num_parameters().
"""

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .backbone import NUM_STAGES, stage_block_configs
from .attention_gate import default_inter_channels
from .coupled_net import CoupledNetConfig, CoupledNetParams, coupled_forward
from .splat import SplatConfig
from .tensor import Tensor

logger = logging.getLogger(__name__)

BN_FLOPS = 4
RELU_FLOPS = 1
SIGMOID_FLOPS = 4
SOFTMAX_FLOPS = 3
BILINEAR_FLOPS = 7


@dataclass
class LayerCost:
    name: str
    kind: str
    flops: int
    params: int


@dataclass
class CostReport:
    layers: List[LayerCost] = field(default_factory=list)

    @property
    def flops(self) -> int:
        return sum(layer.flops for layer in self.layers)

    @property
    def params(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    def by_kind(self) -> Dict[str, int]:
        totals = defaultdict(int)
        for layer in self.layers:
            totals[layer.kind] += layer.flops
        return dict(totals)


def conv_cost(name: str, batch: int, cin: int, cout: int, kernel: int,
              out_h: int, out_w: int, bias: bool) -> LayerCost:
    flops = 2 * batch * cout * out_h * out_w * cin * kernel * kernel
    params = cin * cout * kernel * kernel + (cout if bias else 0)
    return LayerCost(name, "conv", flops, params)


class _Tally:
    """Accumulates LayerCost entries while walking the architecture"""

    def __init__(self, batch: int):
        self.batch = batch
        self.report = CostReport()

    def add(self, name, kind, flops, params=0):
        self.report.layers.append(LayerCost(name, kind, int(flops), int(params)))

    def conv(self, name, cin, cout, kernel, side, bias):
        self.report.layers.append(conv_cost(name, self.batch, cin, cout, kernel, side, side, bias))

    def bn(self, name, channels, side):
        self.add(name, "batch_norm", BN_FLOPS * self.batch * channels * side * side, 2 * channels)

    def relu(self, name, channels, side):
        self.add(name, "activation", RELU_FLOPS * self.batch * channels * side * side)

    def sigmoid(self, name, elements):
        self.add(name, "activation", SIGMOID_FLOPS * self.batch * elements)

    def elementwise(self, name, elements):
        self.add(name, "elementwise", self.batch * elements)

    def resize(self, name, channels, side):
        self.add(name, "resample", BILINEAR_FLOPS * self.batch * channels * side * side)

    def fc(self, name, cin, cout):
        self.add(name, "fully_connected", 2 * self.batch * cin * cout, cin * cout + cout)


def _splat_block(t: _Tally, name: str, cfg: SplatConfig, side_in: int) -> int:
    side = (side_in - 1) // cfg.stride + 1
    w, radix = cfg.group_width, cfg.radix
    area = side * side
    t.conv(f"{name}.transform", cfg.in_channels, cfg.groups * w, 3, side, bias=False)
    t.bn(f"{name}.transform_norm", cfg.groups * w, side)
    t.relu(f"{name}.transform_relu", cfg.groups * w, side)
    for k in range(cfg.cardinality):
        t.elementwise(f"{name}.group{k}.sum", (radix - 1) * w * area)
        t.add(f"{name}.group{k}.pool", "pool", t.batch * w * area)
        t.fc(f"{name}.group{k}.fc1", w, cfg.hidden_width)
        t.add(f"{name}.group{k}.fc1_relu", "activation", RELU_FLOPS * t.batch * cfg.hidden_width)
        t.fc(f"{name}.group{k}.fc2", cfg.hidden_width, radix * w)
        if radix > 1:
            t.add(f"{name}.group{k}.softmax", "activation", SOFTMAX_FLOPS * t.batch * radix * w)
        else:
            t.sigmoid(f"{name}.group{k}.sigmoid", radix * w)
        t.elementwise(f"{name}.group{k}.fuse", (2 * radix - 1) * w * area)
    t.bn(f"{name}.out_norm", cfg.out_channels, side)
    _shortcut(t, name, cfg, side)
    return side


def _residual_block(t: _Tally, name: str, cfg: SplatConfig, side_in: int) -> int:
    side = (side_in - 1) // cfg.stride + 1
    t.conv(f"{name}.conv1", cfg.in_channels, cfg.out_channels, 3, side, bias=False)
    t.bn(f"{name}.norm1", cfg.out_channels, side)
    t.relu(f"{name}.relu1", cfg.out_channels, side)
    t.conv(f"{name}.conv2", cfg.out_channels, cfg.out_channels, 3, side, bias=False)
    t.bn(f"{name}.norm2", cfg.out_channels, side)
    _shortcut(t, name, cfg, side)
    return side


def _shortcut(t: _Tally, name: str, cfg: SplatConfig, side: int):
    if cfg.needs_shortcut:
        t.conv(f"{name}.shortcut", cfg.in_channels, cfg.out_channels, 1, side, bias=False)
        t.bn(f"{name}.shortcut_norm", cfg.out_channels, side)
    t.elementwise(f"{name}.residual", cfg.out_channels * side * side)


def _unet(t: _Tally, name: str, cfg: CoupledNetConfig, cross: bool):
    enc = cfg.encoder
    side = cfg.input_side
    t.conv(f"{name}.stem", enc.in_channels, enc.stem_width, 3, side, bias=False)
    t.bn(f"{name}.stem_norm", enc.stem_width, side)
    t.relu(f"{name}.stem_relu", enc.stem_width, side)

    block = _splat_block if enc.backbone == "resnest" else _residual_block
    for s, blocks in enumerate(stage_block_configs(enc)):
        if cross:
            width = enc.stage_input_width(s)
            t.conv(f"cross.{s}", 2 * width, width, 1, side, bias=False)
        for b, block_cfg in enumerate(blocks):
            side = block(t, f"{name}.stage{s}.block{b}", block_cfg, side)

    for level in range(NUM_STAGES):
        d_ch, skip_ch, out_ch = cfg.decoder_input_width(level), cfg.skip_width(level), cfg.decoder_widths[level]
        fine = 2 * side
        prefix = f"{name}.decoder{level}"
        if cfg.enable_attention_gates:
            f_i = cfg.gate_inter_channels or default_inter_channels(skip_ch)
            t.resize(f"{prefix}.gate.down", skip_ch, side)
            t.conv(f"{prefix}.gate.w_x", skip_ch, f_i, 1, side, bias=False)
            t.conv(f"{prefix}.gate.w_g", d_ch, f_i, 1, side, bias=True)
            t.elementwise(f"{prefix}.gate.add", f_i * side * side)
            t.relu(f"{prefix}.gate.relu", f_i, side)
            t.conv(f"{prefix}.gate.psi", f_i, 1, 1, side, bias=True)
            t.sigmoid(f"{prefix}.gate.sigmoid", side * side)
            t.resize(f"{prefix}.gate.up", 1, fine)
            t.elementwise(f"{prefix}.gate.scale", skip_ch * fine * fine)
        in_ch = d_ch + skip_ch + (out_ch if cross else 0)
        t.resize(f"{prefix}.upsample", d_ch, fine)
        t.conv(f"{prefix}.conv1", in_ch, out_ch, 3, fine, bias=False)
        t.bn(f"{prefix}.norm1", out_ch, fine)
        t.relu(f"{prefix}.relu1", out_ch, fine)
        t.conv(f"{prefix}.conv2", out_ch, out_ch, 3, fine, bias=False)
        t.bn(f"{prefix}.norm2", out_ch, fine)
        t.relu(f"{prefix}.relu2", out_ch, fine)
        side = fine

    t.conv(f"{name}.head", cfg.decoder_widths[-1], 1, 1, side, bias=True)
    t.sigmoid(f"{name}.head_sigmoid", side * side)


def estimate_flops_params(cfg: CoupledNetConfig, batch: int = 1) -> CostReport:
    t = _Tally(batch)
    _unet(t, "unet1", cfg, cross=False)
    if cfg.enable_second_unet:
        side = cfg.input_side
        channels = cfg.encoder.in_channels
        if cfg.bridge_mode == "multiply":
            t.elementwise("bridge.multiply", channels * side * side)
        else:
            t.conv("bridge", channels + 1, channels, 1, side, bias=False)
        _unet(t, "unet2", cfg, cross=cfg.cross_enabled)
    return t.report


@dataclass
class TimingReport:
    images: int
    seconds: float

    @property
    def seconds_per_image(self) -> float:
        return self.seconds / self.images

    @property
    def fps(self) -> float:
        return self.images / self.seconds if self.seconds > 0 else float("inf")


def measure_inference(params: CoupledNetParams, cfg: CoupledNetConfig, batch: int = 1,
                      repeats: int = 3, seed: int = 0) -> TimingReport:
    """Wall-clock eval-mode forward passes on random images (one warm-up pass excluded)"""
    rng = np.random.default_rng(seed)
    image = Tensor(rng.random((batch, cfg.encoder.in_channels, cfg.input_side, cfg.input_side)))
    coupled_forward(image, params, cfg, training=False)
    start = time.perf_counter()
    for _ in range(repeats):
        coupled_forward(image, params, cfg, training=False)
    elapsed = time.perf_counter() - start
    logger.info(f"timed {repeats} x {batch} images in {elapsed:.3f}s")
    return TimingReport(images=repeats * batch, seconds=elapsed)
