"""
Additive attention gate on a skip connection.

Given an encoder feature x (fine) and a decoder feature g (coarse), the gate
computes a single-channel coefficient map alpha in (0, 1) at the resolution
of x and returns x scaled by it:

    q     = relu(W_x(resample(x, H_g, W_g)) + W_g(g))
    alpha = resample(sigmoid(psi(q)), H_x, W_x)
    x_hat = alpha * x
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ShapeError
from .layers import ConvParams, ParamGroup, conv, init_conv
from .tensor import Tensor

MIN_INTER_CHANNELS = 4


def default_inter_channels(x_channels: int) -> int:
    return max(x_channels // 2, MIN_INTER_CHANNELS)


@dataclass
class AttentionGateParams(ParamGroup):
    w_g: ConvParams
    w_x: ConvParams
    psi: ConvParams

    @property
    def inter_channels(self) -> int:
        return self.psi.in_channels


def init_attention_gate(rng: np.random.Generator, x_channels: int, g_channels: int,
                        inter_channels: Optional[int] = None) -> AttentionGateParams:
    f_i = inter_channels or default_inter_channels(x_channels)
    return AttentionGateParams(
        w_g=init_conv(rng, g_channels, f_i, 1, bias=True),
        w_x=init_conv(rng, x_channels, f_i, 1, bias=False),
        psi=init_conv(rng, f_i, 1, 1, bias=True),
    )


def attention_gate_forward(x: Tensor, g: Tensor, params: AttentionGateParams) -> Tuple[Tensor, Tensor]:
    """Returns (x_hat, alpha) with alpha of shape [B, 1, H_x, W_x]"""
    if x.ndim != 4 or g.ndim != 4:
        raise ShapeError(f"attention gate needs 4-D inputs, got x {x.shape} and g {g.shape}")
    if x.shape[0] != g.shape[0]:
        raise ShapeError(f"attention gate batch mismatch: x has {x.shape[0]}, g has {g.shape[0]}")
    if x.shape[1] != params.w_x.in_channels or g.shape[1] != params.w_g.in_channels:
        raise ShapeError(
            f"attention gate expects x/g channels {params.w_x.in_channels}/{params.w_g.in_channels}, "
            f"got {x.shape[1]}/{g.shape[1]}"
        )
    h_x, w_x = x.shape[2], x.shape[3]
    h_g, w_g = g.shape[2], g.shape[3]
    if h_g > h_x or w_g > w_x:
        raise ShapeError(f"gating signal {h_g}x{w_g} must not be finer than x {h_x}x{w_x}")

    x_coarse = F.resample_bilinear(x, h_g, w_g) if (h_g, w_g) != (h_x, w_x) else x
    q = F.relu(conv(x_coarse, params.w_x) + conv(g, params.w_g))
    coarse = F.sigmoid(conv(q, params.psi))
    alpha = F.resample_bilinear(coarse, h_x, w_x) if (h_g, w_g) != (h_x, w_x) else coarse
    return alpha * x, alpha
