"""
Finite-difference gradient checks.

check_gradients compares the analytic gradients produced by backward()
against central differences (f(x + eps) - f(x - eps)) / (2 eps), one
coordinate at a time, and reports the worst relative error

    |a - n| / max(|a|, |n|, 1e-8)

The three suites ("ops", "blocks", "full") are what `polypnet gradcheck`
runs. Everything here needs double precision.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .attention_gate import attention_gate_forward, init_attention_gate
from .coupled_net import CoupledNetConfig, coupled_forward, decoder_block, init_coupled_net, init_decoder_block
from .errors import PolypNetError
from .layers import ParamGroup, perturb_parameters
from .losses import TverskyParams, coupled_loss, tversky_loss
from .splat import SplatConfig, init_splat_block, split_attention_forward
from .tensor import OpGraph, Tensor, backward, get_dtype, precision

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
TOLERANCE = 1e-4
REL_FLOOR = 1e-8
KINK_TOLERANCE = 1e-3
SUITES = ("ops", "blocks", "full")


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int = 0
    worst: Optional[Tuple[int, Tuple[int, ...]]] = None
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < TOLERANCE

    def describe(self) -> str:
        status = "ok" if self.passed else "FAIL"
        line = f"{self.name:<28} max rel error {self.max_rel_error:.3e} over {self.checked} coords"
        if self.skipped:
            line += f" ({self.skipped} skipped)"
        return f"{line} [{status}]"


@dataclass
class GradCheckReport:
    scale: str
    results: List[GradCheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)

    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed]


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def analytic_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> List[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
    with OpGraph() as graph:
        out = fn(*inputs)
    backward(graph, out)
    return [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def _scalar(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> float:
    out = fn(*inputs)
    return float(out.data.reshape(-1)[0])


def _coordinates(size: int, max_coords: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_coords, replace=False))


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = DEFAULT_EPS,
                    name: str = "", max_coords: Optional[int] = None, seed: int = 0,
                    skip_kinks: bool = True, atol: float = 0.0) -> GradCheckResult:
    """Compare backward() against central differences for a scalar fn(*inputs).

    max_coords samples that many coordinates per input (all when None).
    With skip_kinks, coordinates whose one-sided differences disagree (the
    perturbation crossed a ReLU or max-pool switch) are skipped. Coordinates
    where both gradients are below atol are skipped too.
    """
    if any(t.data.dtype != np.float64 for t in inputs) or get_dtype() != np.float64:
        raise PolypNetError("check_gradients needs double precision inputs (use precision('double'))")
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
    grads = analytic_gradients(fn, inputs)
    f0 = _scalar(fn, inputs)

    worst_error, worst, checked, skipped = 0.0, None, 0, 0
    for which, (t, grad) in enumerate(zip(inputs, grads)):
        flat = t.data.reshape(-1)
        for i in _coordinates(flat.size, max_coords, rng):
            original = flat[i]
            flat[i] = original + eps
            f_plus = _scalar(fn, inputs)
            flat[i] = original - eps
            f_minus = _scalar(fn, inputs)
            flat[i] = original

            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = float(grad.reshape(-1)[i])
            if skip_kinks:
                forward, backward_diff = (f_plus - f0) / eps, (f0 - f_minus) / eps
                if relative_error(forward, backward_diff) > KINK_TOLERANCE and abs(forward - backward_diff) > atol:
                    skipped += 1
                    continue
            if max(abs(analytic), abs(numeric)) < atol:
                skipped += 1
                continue
            error = relative_error(analytic, numeric)
            checked += 1
            if error > worst_error or worst is None:
                worst_error = max(error, worst_error)
                worst = (which, tuple(int(k) for k in np.unravel_index(i, t.shape)))

    result = GradCheckResult(name=name, max_rel_error=worst_error, checked=checked, skipped=skipped,
                             worst=worst, seconds=time.perf_counter() - start)
    if not math.isfinite(worst_error) or worst_error >= TOLERANCE:
        logger.warning(f"gradient check '{name}' failed: {worst_error:.3e} at input/index {worst}")
    return result


def _probe(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape)


def _tensor(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape))


def _op_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable[..., Tensor], List[Tensor]]]:
    """Each primitive wrapped as a scalar function of its differentiable inputs"""
    x4 = _tensor(rng, 2, 3, 5, 5)
    w_conv = _probe(rng, (2, 4, 5, 5))
    w_pool = _probe(rng, (2, 3, 2, 2))
    w_resample = _probe(rng, (2, 3, 7, 9))
    w_gap = _probe(rng, (2, 3))
    w_act = _probe(rng, (2, 3, 5, 5))
    w_soft = _probe(rng, (2, 4, 3))
    w_fc = _probe(rng, (2, 4))
    w_cat = _probe(rng, (2, 5, 5, 5))
    w_bn = _probe(rng, (2, 3, 5, 5))
    w_stride = _probe(rng, (2, 4, 3, 3))
    w_item = _probe(rng, (2, 2, 5, 5))
    stats = F.RunningStats.fresh(3, dtype=np.float64)
    eval_stats = F.RunningStats(rng.normal(size=3), rng.uniform(0.5, 2.0, size=3), F.BN_MOMENTUM)

    return {
        "add/mul/div": (lambda a, b: F.weighted_sum(a * b + a / (b * b + 1.0) - b, w_act),
                        [_tensor(rng, 2, 3, 5, 5), _tensor(rng, 2, 3, 5, 5)]),
        "sum/mean/reshape": (lambda a: (a.reshape(6, 25).mean(axis=1) * a.sum(axis=(0, 2, 3)).reshape(1, 3).sum()).sum(),
                             [x4]),
        "conv2d": (lambda x, k, b: F.weighted_sum(F.conv2d(x, k, b, stride=1, padding=1), w_conv),
                   [_tensor(rng, 2, 3, 5, 5), _tensor(rng, 4, 3, 3, 3, scale=0.5), _tensor(rng, 4)]),
        "conv2d stride 2": (lambda x, k: F.weighted_sum(F.conv2d(x, k, stride=2, padding=1), w_stride),
                            [_tensor(rng, 2, 3, 5, 5), _tensor(rng, 4, 3, 3, 3, scale=0.5)]),
        "resample_bilinear": (lambda x: F.weighted_sum(F.resample_bilinear(x, 7, 9), w_resample),
                              [_tensor(rng, 2, 3, 4, 3)]),
        "max_pool2d": (lambda x: F.weighted_sum(F.max_pool2d(x, 2, 2), w_pool), [_tensor(rng, 2, 3, 4, 4)]),
        "global_avg_pool": (lambda x: F.weighted_sum(F.global_avg_pool(x), w_gap), [_tensor(rng, 2, 3, 5, 5)]),
        "relu": (lambda x: F.weighted_sum(F.activation(x, "relu"), w_act), [_tensor(rng, 2, 3, 5, 5)]),
        "sigmoid": (lambda x: F.weighted_sum(F.activation(x, "sigmoid"), w_act), [_tensor(rng, 2, 3, 5, 5)]),
        "softmax_axis": (lambda x: F.weighted_sum(F.softmax_axis(x, 1), w_soft), [_tensor(rng, 2, 4, 3, scale=3.0)]),
        "batch_norm train": (lambda x, g, b: F.weighted_sum(F.batch_norm(x, g, b, stats, training=True), w_bn),
                             [_tensor(rng, 2, 3, 5, 5), _tensor(rng, 3), _tensor(rng, 3)]),
        "batch_norm eval": (lambda x, g, b: F.weighted_sum(F.batch_norm(x, g, b, eval_stats, training=False), w_bn),
                            [_tensor(rng, 2, 3, 5, 5), _tensor(rng, 3), _tensor(rng, 3)]),
        "fully_connected": (lambda x, w, b: F.weighted_sum(F.fully_connected(x, w, b), w_fc),
                            [_tensor(rng, 2, 6), _tensor(rng, 4, 6), _tensor(rng, 4)]),
        "concat_channels": (lambda a, b: F.weighted_sum(F.concat_channels([a, b]), w_cat),
                            [_tensor(rng, 2, 2, 5, 5), _tensor(rng, 2, 3, 5, 5)]),
        "getitem": (lambda x: F.weighted_sum(x[:, 1:3], w_item), [_tensor(rng, 2, 4, 5, 5)]),
    }


def _with_params(group: ParamGroup, extra: Sequence[Tensor], forward: Callable[[], Tensor]):
    """Expose a block's parameters (plus extra inputs) as check_gradients inputs"""
    params = [t for _, t in group.named_parameters()]
    return (lambda *_: forward()), list(extra) + params


def _block_cases(rng: np.random.Generator):
    cases = {}

    for stride, cin in ((1, 8), (2, 4)):
        cfg = SplatConfig(in_channels=cin, out_channels=8, cardinality=2, radix=2, stride=stride)
        block = init_splat_block(rng, cfg)
        perturb_parameters(block, rng)
        x = _tensor(rng, 2, cin, 6, 6)
        out_side = 6 // stride
        probe = _probe(rng, (2, 8, out_side, out_side))
        cases[f"split-attention s{stride}"] = _with_params(
            block, [x], lambda block=block, x=x, cfg=cfg, probe=probe:
            F.weighted_sum(split_attention_forward(x, block, cfg, training=True), probe))

    cfg_r1 = SplatConfig(in_channels=8, out_channels=8, cardinality=2, radix=1)
    block_r1 = init_splat_block(rng, cfg_r1)
    perturb_parameters(block_r1, rng)
    x_r1 = _tensor(rng, 2, 8, 4, 4)
    probe_r1 = _probe(rng, (2, 8, 4, 4))
    cases["split-attention radix 1"] = _with_params(
        block_r1, [x_r1], lambda: F.weighted_sum(split_attention_forward(x_r1, block_r1, cfg_r1), probe_r1))

    gate = init_attention_gate(rng, 4, 6)
    perturb_parameters(gate, rng)
    skip, coarse = _tensor(rng, 2, 4, 8, 8), _tensor(rng, 2, 6, 4, 4)
    probe_gate = _probe(rng, (2, 4, 8, 8))
    cases["attention gate"] = _with_params(
        gate, [skip, coarse], lambda: F.weighted_sum(attention_gate_forward(skip, coarse, gate)[0], probe_gate))

    dec = init_decoder_block(rng, 6 + 3, 4)
    perturb_parameters(dec, rng)
    d, s = _tensor(rng, 2, 6, 3, 3), _tensor(rng, 2, 3, 6, 6)
    probe_dec = _probe(rng, (2, 4, 6, 6))
    cases["decoder block"] = _with_params(
        dec, [d, s], lambda: F.weighted_sum(decoder_block(d, [s], dec, training=True), probe_dec))

    target = (rng.random((2, 1, 6, 6)) > 0.5).astype(np.float64)
    tversky = TverskyParams()
    cases["tversky loss"] = (lambda logits: tversky_loss(F.sigmoid(logits), target, tversky),
                             [_tensor(rng, 2, 1, 6, 6)])
    cases["coupled loss"] = (lambda a, b: coupled_loss(F.sigmoid(a), F.sigmoid(b), target, tversky),
                             [_tensor(rng, 2, 1, 6, 6), _tensor(rng, 2, 1, 6, 6)])
    return cases


def _full_case(rng: np.random.Generator, side: int = 32, width: int = 4, batch: int = 2):
    cfg = CoupledNetConfig.toy(width=width, input_side=side)
    params = init_coupled_net(cfg, rng)
    perturb_parameters(params, rng)
    image = Tensor(rng.random((batch, 3, side, side)))
    return _with_params(params, [image], lambda: coupled_forward(image, params, cfg, training=True).p2.mean())


def run_suite(scale: str, seed: int = 0, eps: float = DEFAULT_EPS, max_coords: Optional[int] = None) -> GradCheckReport:
    """Run the "ops", "blocks" or "full" gradient suite in double precision"""
    if scale not in SUITES:
        raise PolypNetError(f"unknown gradcheck scale '{scale}', expected one of {SUITES}")
    report = GradCheckReport(scale=scale)
    rng = np.random.default_rng(seed)
    with precision("double"):
        if scale == "ops":
            cases = _op_cases(rng)
            limit, atol = max_coords, 0.0
        elif scale == "blocks":
            cases = _block_cases(rng)
            limit, atol = max_coords or 24, 0.0
        else:
            # sampled parameter coordinates of the whole network against mean(p2)
            cases = {"coupled network": _full_case(rng)}
            limit, atol = max_coords or 4, 1e-7
        for name, (fn, inputs) in cases.items():
            result = check_gradients(fn, inputs, eps=eps, name=name, max_coords=limit, seed=seed, atol=atol)
            logger.info(result.describe())
            report.results.append(result)
    return report
