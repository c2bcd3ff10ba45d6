"""
Split-attention residual block.

The block's transform is a set of G = K*R feature groups U_i, each a 3x3
convolution followed by batch norm and ReLU. Group i = k*R + r is split r of
cardinal group k. For every cardinal group:

    U_hat_k = sum_r U_{k,r}
    s_k     = global_avg_pool(U_hat_k)
    a_k     = softmax over r of G_k(s_k)     (R > 1)
            = sigmoid(G_k(s_k))              (R == 1)
    V_k     = sum_r a_{k,r} * U_{k,r}

where G_k is a two-layer MLP (FC, ReLU, FC) emitting R*(C/K) logits. The
outputs V_1..V_K are concatenated, normalized, and added to the (possibly
projected) input: Y = X' + BN(V).

All G group convolutions share the input and run as a single convolution
with G*(C/K) output channels; group i owns output channels [i*w, (i+1)*w).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .layers import (
    BatchNormParams,
    ConvParams,
    ParamGroup,
    conv,
    init_batch_norm,
    init_conv,
    init_linear,
    norm,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)

MIN_ATTENTION_HIDDEN = 8


@dataclass(frozen=True)
class SplatConfig:
    in_channels: int
    out_channels: int
    cardinality: int = 2
    radix: int = 2
    stride: int = 1
    hidden: Optional[int] = None

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "cardinality", "radix"):
            if getattr(self, name) < 1:
                raise ConfigError(f"split-attention {name} must be positive, got {getattr(self, name)}")
        if self.out_channels % self.cardinality:
            raise ConfigError(
                f"out_channels {self.out_channels} is not divisible by cardinality {self.cardinality}"
            )
        if self.stride not in (1, 2):
            raise ConfigError(f"split-attention stride must be 1 or 2, got {self.stride}")
        if self.hidden is not None and self.hidden < 1:
            raise ConfigError(f"attention hidden width must be positive, got {self.hidden}")

    @property
    def groups(self) -> int:
        return self.cardinality * self.radix

    @property
    def group_width(self) -> int:
        return self.out_channels // self.cardinality

    @property
    def hidden_width(self) -> int:
        if self.hidden is not None:
            return self.hidden
        return max(self.out_channels // 4, MIN_ATTENTION_HIDDEN)

    @property
    def needs_shortcut(self) -> bool:
        return self.in_channels != self.out_channels or self.stride != 1


@dataclass
class AttentionMLPParams(ParamGroup):
    fc1_weight: Tensor
    fc1_bias: Tensor
    fc2_weight: Tensor
    fc2_bias: Tensor


@dataclass
class SplatBlockParams(ParamGroup):
    transform: ConvParams
    transform_norm: BatchNormParams
    attention: List[AttentionMLPParams]
    out_norm: BatchNormParams
    shortcut: Optional[ConvParams] = None
    shortcut_norm: Optional[BatchNormParams] = None


@dataclass
class SplatTrace:
    """Intermediate values of one forward pass (raw arrays, no graph)"""
    attention: np.ndarray
    splits: List[np.ndarray] = field(default_factory=list)
    fused: Optional[np.ndarray] = None


def init_splat_block(rng: np.random.Generator, cfg: SplatConfig) -> SplatBlockParams:
    w = cfg.group_width
    attention = []
    for _ in range(cfg.cardinality):
        fc1_w, fc1_b = init_linear(rng, w, cfg.hidden_width)
        fc2_w, fc2_b = init_linear(rng, cfg.hidden_width, cfg.radix * w)
        attention.append(AttentionMLPParams(fc1_w, fc1_b, fc2_w, fc2_b))

    shortcut = shortcut_norm = None
    if cfg.needs_shortcut:
        shortcut = init_conv(rng, cfg.in_channels, cfg.out_channels, 1, stride=cfg.stride, bias=False)
        shortcut_norm = init_batch_norm(cfg.out_channels)

    return SplatBlockParams(
        transform=init_conv(rng, cfg.in_channels, cfg.groups * w, 3, stride=cfg.stride, bias=False),
        transform_norm=init_batch_norm(cfg.groups * w),
        attention=attention,
        out_norm=init_batch_norm(cfg.out_channels, zero_gamma=True),
        shortcut=shortcut,
        shortcut_norm=shortcut_norm,
    )


def split_attention_weights(s: Tensor, mlp: AttentionMLPParams, radix: int) -> Tensor:
    """Map the pooled descriptor s[B, w] of one cardinal group to weights [B, R, w]"""
    batch, width = s.shape
    hidden = F.relu(F.fully_connected(s, mlp.fc1_weight, mlp.fc1_bias))
    logits = F.fully_connected(hidden, mlp.fc2_weight, mlp.fc2_bias).reshape(batch, radix, width)
    if radix > 1:
        return F.softmax_axis(logits, axis=1)
    return F.sigmoid(logits)


def split_attention_forward(x: Tensor, params: SplatBlockParams, cfg: SplatConfig,
                            training: bool = True, trace: bool = False):
    """Run one split-attention block; returns Y, or (Y, SplatTrace) when trace is set"""
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"split-attention block expects {cfg.in_channels} input channels, got shape {x.shape}")
    if params.transform.out_channels != cfg.groups * cfg.group_width:
        raise ShapeError(
            f"block weights produce {params.transform.out_channels} channels, "
            f"config needs {cfg.groups} groups of {cfg.group_width}"
        )
    batch = x.shape[0]
    w, radix = cfg.group_width, cfg.radix

    u = F.relu(norm(conv(x, params.transform), params.transform_norm, training))
    splits = [u[:, i * w:(i + 1) * w] for i in range(cfg.groups)]

    fused_groups = []
    weights = []
    for k in range(cfg.cardinality):
        group = splits[k * radix:(k + 1) * radix]
        u_hat = group[0]
        for part in group[1:]:
            u_hat = u_hat + part
        a = split_attention_weights(F.global_avg_pool(u_hat), params.attention[k], radix)
        weights.append(a.data)

        v = None
        for r, part in enumerate(group):
            term = a[:, r, :].reshape(batch, w, 1, 1) * part
            v = term if v is None else v + term
        fused_groups.append(v)

    fused = F.concat_channels(fused_groups)
    if params.shortcut is not None:
        identity = norm(conv(x, params.shortcut), params.shortcut_norm, training)
    else:
        identity = x
    y = identity + norm(fused, params.out_norm, training)

    if not trace:
        return y
    return y, SplatTrace(
        attention=np.stack(weights, axis=1),
        splits=[s.data for s in splits],
        fused=fused.data,
    )


def block_output_shape(cfg: SplatConfig, height: int, width: int) -> Tuple[int, int, int]:
    return cfg.out_channels, (height - 1) // cfg.stride + 1, (width - 1) // cfg.stride + 1
