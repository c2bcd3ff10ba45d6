"""
Eval-mode prediction and metric reporting.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .coupled_net import CoupledNetConfig, CoupledNetParams, coupled_forward
from .dataset import SamplePair, stack_batch
from .errors import DatasetError
from .metrics import CurveData, MetricReport, PixelPool, confusion, image_metrics, macro_aggregate
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class Prediction:
    sample_id: str
    p1: np.ndarray
    p2: np.ndarray
    attention: Optional[np.ndarray] = None


@dataclass
class EvaluationResult:
    final: MetricReport
    auxiliary: MetricReport
    curve: Optional[CurveData]


def iter_batches(samples: Sequence[SamplePair], batch_size: int) -> Iterator[Sequence[SamplePair]]:
    for start in range(0, len(samples), batch_size):
        yield samples[start:start + batch_size]


def predict(params: CoupledNetParams, cfg: CoupledNetConfig, samples: Sequence[SamplePair],
            batch_size: int = 4, with_attention: bool = False) -> List[Prediction]:
    """Eval-mode forward passes (running BN statistics), in sample order"""
    out = []
    for batch in iter_batches(samples, batch_size):
        images, _ = stack_batch(batch)
        result = coupled_forward(Tensor(images), params, cfg, training=False)
        attention = result.attention_map if with_attention else None
        for i, sample in enumerate(batch):
            out.append(Prediction(
                sample_id=sample.sample_id,
                p1=result.p1.data[i, 0].copy(),
                p2=result.p2.data[i, 0].copy(),
                attention=attention.data[i, 0].copy() if attention is not None else None,
            ))
    return out


def report_from_maps(maps: Sequence[Tuple[str, np.ndarray, np.ndarray]], threshold: float,
                     name: str = "", with_curves: bool = False) -> Tuple[MetricReport, Optional[CurveData]]:
    """maps are (sample_id, probability map, ground-truth mask) triples"""
    if not maps:
        raise DatasetError(f"cannot evaluate '{name}': no samples")
    per_image = []
    pool = PixelPool()
    for sample_id, prob, mask in maps:
        per_image.append(image_metrics(confusion(prob, mask, threshold), image_id=sample_id))
        if with_curves:
            pool.add(prob, mask)
    report = macro_aggregate(per_image, threshold=threshold, name=name)
    return report, pool.curves(name) if with_curves else None


def evaluate(params: CoupledNetParams, cfg: CoupledNetConfig, samples: Sequence[SamplePair],
             threshold: float = 0.5, name: str = "test", batch_size: int = 4,
             oracle: bool = False) -> EvaluationResult:
    """Metrics of the final head (p2) with pooled-pixel curves, plus the auxiliary head (p1).

    With oracle set the ground-truth masks stand in for both predictions.
    """
    if oracle:
        preds = [Prediction(s.sample_id, s.mask.astype(np.float64), s.mask.astype(np.float64)) for s in samples]
    else:
        preds = predict(params, cfg, samples, batch_size)
    masks = {s.sample_id: s.mask for s in samples}
    final, curve = report_from_maps([(p.sample_id, p.p2, masks[p.sample_id]) for p in preds],
                                    threshold, name=name, with_curves=True)
    auxiliary, _ = report_from_maps([(p.sample_id, p.p1, masks[p.sample_id]) for p in preds],
                                    threshold, name=f"{name}_aux")
    logger.info(final.summary())
    if curve is not None:
        logger.info(f"{name}: AUC={curve.auc:.4f}, MAP={curve.average_precision:.4f}")
    return EvaluationResult(final=final, auxiliary=auxiliary, curve=curve)


def validation_dice(params: CoupledNetParams, cfg: CoupledNetConfig, samples: Sequence[SamplePair],
                    threshold: float, head: str, batch_size: int = 4) -> MetricReport:
    """Macro metrics of one head ("p1" or "p2") for early stopping"""
    preds = predict(params, cfg, samples, batch_size)
    masks = {s.sample_id: s.mask for s in samples}
    report, _ = report_from_maps([(p.sample_id, getattr(p, head), masks[p.sample_id]) for p in preds],
                                 threshold, name=f"validation_{head}")
    return report
