"""
Parameter containers and the small layer helpers shared by every block.

A ParamGroup is a dataclass whose Tensor fields are learnable parameters and
whose RunningStats fields are buffers. Nested groups, lists of groups and
None-valued optional members are all walked by named_parameters(), which is
what checkpoints and optimizers key on.
"""

from dataclasses import dataclass, fields
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import functional as F
from .functional import RunningStats
from .tensor import Tensor, get_dtype


class ParamGroup:

    def _children(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in self._children():
            yield from _walk_parameters(f"{prefix}{name}", value)

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._children():
            yield from _walk_buffers(f"{prefix}{name}", value)

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_dict(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def buffer_dict(self) -> Dict[str, np.ndarray]:
        return dict(self.named_buffers())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())


def _walk_parameters(name, value):
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, ParamGroup):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_parameters(f"{name}.{i}", item)


def _walk_buffers(name, value):
    if isinstance(value, RunningStats):
        yield f"{name}.running_mean", value.mean
        yield f"{name}.running_var", value.var
    elif isinstance(value, ParamGroup):
        yield from value.named_buffers(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_buffers(f"{name}.{i}", item)


@dataclass
class ConvParams(ParamGroup):
    weight: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class BatchNormParams(ParamGroup):
    gamma: Tensor
    beta: Tensor
    stats: RunningStats


def param(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


def init_conv(rng: np.random.Generator, in_channels: int, out_channels: int, kernel: int,
              stride: int = 1, padding: Optional[int] = None, bias: bool = True) -> ConvParams:
    """Kaiming fan-in initialization; zero bias"""
    if padding is None:
        padding = kernel // 2
    fan_in = in_channels * kernel * kernel
    weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kernel, kernel))
    return ConvParams(
        weight=param(weight),
        bias=param(np.zeros(out_channels)) if bias else None,
        stride=stride,
        padding=padding,
    )


def init_batch_norm(channels: int, zero_gamma: bool = False) -> BatchNormParams:
    gamma = np.zeros(channels) if zero_gamma else np.ones(channels)
    return BatchNormParams(
        gamma=param(gamma),
        beta=param(np.zeros(channels)),
        stats=RunningStats.fresh(channels, dtype=get_dtype()),
    )


def init_linear(rng: np.random.Generator, in_features: int, out_features: int) -> Tuple[Tensor, Tensor]:
    weight = rng.normal(0.0, np.sqrt(2.0 / in_features), size=(out_features, in_features))
    return param(weight), param(np.zeros(out_features))


def conv(x: Tensor, p: ConvParams) -> Tensor:
    return F.conv2d(x, p.weight, p.bias, stride=p.stride, padding=p.padding)


def norm(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    return F.batch_norm(x, p.gamma, p.beta, p.stats, training=training)


def conv_bn_relu(x: Tensor, c: ConvParams, n: BatchNormParams, training: bool) -> Tensor:
    return F.relu(norm(conv(x, c), n, training))


def perturb_parameters(group: ParamGroup, rng: np.random.Generator, scale: float = 0.1):
    """Add Gaussian noise to every parameter.

    Used to move freshly initialised networks off their symmetric starting
    point (zero residual scales, zero biases) before gradient checks.
    """
    for _, t in group.named_parameters():
        t.data = t.data + rng.normal(0.0, scale, size=t.shape).astype(t.data.dtype)


def snapshot(group: ParamGroup) -> Dict[str, np.ndarray]:
    state = {name: t.data.copy() for name, t in group.named_parameters()}
    state.update({f"buffer:{name}": arr.copy() for name, arr in group.named_buffers()})
    return state


def restore(group: ParamGroup, state: Dict[str, np.ndarray]):
    for name, t in group.named_parameters():
        t.data = state[name].copy()
    for name, arr in group.named_buffers():
        arr[...] = state[f"buffer:{name}"]
