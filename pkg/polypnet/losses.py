"""
Tversky index and the coupled two-head training loss.

    T = (sum P*G + eps) / (sum P*G + alpha * sum P*(1-G) + beta * sum (1-P)*G + eps)

alpha weighs false positives, beta false negatives. The loss minimises
1 - T for each head: L = (1 - T(p2)) + (1 - T(p1)).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class TverskyParams:
    alpha: float = 0.3
    beta: float = 0.7
    smooth: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigError(f"tversky alpha/beta must be >= 0 with a positive sum, got {self.alpha}/{self.beta}")
        if self.smooth <= 0:
            raise ConfigError(f"tversky smooth must be > 0, got {self.smooth}")


def tversky_index(prob, target, params: TverskyParams = TverskyParams()) -> Tensor:
    """Differentiable in prob; target is a constant binary map of the same shape"""
    prob = as_tensor(prob)
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if prob.shape != target_data.shape:
        raise ShapeError(f"tversky_index shape mismatch: prediction {prob.shape}, target {target_data.shape}")
    g = Tensor._wrap(target_data.astype(prob.data.dtype, copy=False), False)

    tp = (prob * g).sum()
    fp = (prob * (1.0 - g)).sum()
    fn = ((1.0 - prob) * g).sum()
    return (tp + params.smooth) / (tp + params.alpha * fp + params.beta * fn + params.smooth)


def tversky_loss(prob, target, params: TverskyParams = TverskyParams()) -> Tensor:
    return 1.0 - tversky_index(prob, target, params)


def coupled_loss(p1, p2, target, params: TverskyParams = TverskyParams()) -> Tensor:
    return tversky_loss(p2, target, params) + tversky_loss(p1, target, params)
