"""
Stochastic gradient descent with momentum:

    v <- momentum * v + grad
    p <- p - lr * v
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, GradientMissingError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    names: List[str]
    velocities: List[np.ndarray]
    lr: float = 5e-3
    momentum: float = 0.9
    steps: int = 0

    @classmethod
    def create(cls, named_params: Sequence[Tuple[str, Tensor]], lr: float, momentum: float) -> "OptimizerState":
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        names = [name for name, _ in named_params]
        velocities = [np.zeros_like(t.data) for _, t in named_params]
        return cls(names=names, velocities=velocities, lr=lr, momentum=momentum)

    def velocity_dict(self) -> Dict[str, np.ndarray]:
        return dict(zip(self.names, self.velocities))


def sgd_momentum_step(params: Sequence[Tensor], state: OptimizerState):
    """Apply one update to every registered parameter using its .grad"""
    if len(params) != len(state.velocities):
        raise GradientMissingError(f"optimizer has {len(state.velocities)} buffers but got {len(params)} parameters")
    for i, p in enumerate(params):
        if p.grad is None:
            raise GradientMissingError(f"parameter '{state.names[i]}' has no gradient")
    for i, p in enumerate(params):
        v = state.momentum * state.velocities[i] + p.grad
        state.velocities[i] = v.astype(p.data.dtype, copy=False)
        p.data = (p.data - state.lr * state.velocities[i]).astype(p.data.dtype, copy=False)
    state.steps += 1


@dataclass
class SGD:
    """Owns a parameter list and its OptimizerState"""
    named_params: List[Tuple[str, Tensor]]
    lr: float
    momentum: float
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.state = OptimizerState.create(self.named_params, self.lr, self.momentum)

    @property
    def params(self) -> List[Tensor]:
        return [t for _, t in self.named_params]

    def zero_grad(self):
        for t in self.params:
            t.grad = None

    def step(self):
        sgd_momentum_step(self.params, self.state)
