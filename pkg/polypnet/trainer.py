"""
Two-phase training.

Phase 1 trains UNet-1 alone against 1 - T(p1). Phase 2 starts from the best
phase-1 weights and trains the coupled network (all parameters, or all but
UNet-1 when frozen) against (1 - T(p2)) + (1 - T(p1)). Each phase stops after
`patience` epochs without a validation mDice improvement, or at
`max_epochs`, and keeps its best-validation weights.

Randomness: initialisation draws from default_rng([seed, 0]) and batch
shuffling from default_rng([seed, 1]).
"""

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .augment import augment_dataset
from .checkpoint import capture, save_checkpoint
from .config import TrainConfig, format_value, log_config
from .coupled_net import CoupledNetConfig, CoupledNetParams, coupled_forward, init_coupled_net, unet1_forward
from .dataset import SamplePair, load_dataset, manifest_from_samples, resize_pair, stack_batch
from .errors import DatasetError, TrainingDivergedError
from .evaluation import EvaluationResult, evaluate, validation_dice
from .layers import restore, snapshot
from .losses import TverskyParams, coupled_loss, tversky_loss
from .metrics import METRIC_NAMES
from .optim import SGD
from .reports import write_report
from .scenarios import Split, resolve, scenario_split
from .synthetic import SOURCE_NAME as SYNTHETIC_SOURCE
from .synthetic import SyntheticConfig, synth_generate
from .tensor import OpGraph, Tensor, backward, precision

logger = logging.getLogger(__name__)

RUNLOG_NAME = "runlog.jsonl"
PHASE1_CHECKPOINT = "phase1.ckpt"
BEST_CHECKPOINT = "best.ckpt"


@dataclass
class EpochRecord:
    phase: int
    epoch: int
    train_loss: float
    val_mdice: float
    val_miou: float
    seconds: float


class RunLog:
    """Append-only JSON-lines run record"""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: List[dict] = []
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            open(path, "w").close()

    def append(self, kind: str, **values):
        record = {"type": kind, **values}
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def epochs(self, phase: Optional[int] = None) -> List[dict]:
        return [r for r in self.records if r["type"] == "epoch" and (phase is None or r["phase"] == phase)]

    def losses(self) -> List[float]:
        return [r["train_loss"] for r in self.epochs()]


@dataclass
class DataBundle:
    train: List[SamplePair]
    validation: List[SamplePair]
    test: Dict[str, List[SamplePair]] = field(default_factory=dict)


@dataclass
class TrainResult:
    params: CoupledNetParams
    model_config: CoupledNetConfig
    runlog: RunLog
    best_mdice: Dict[int, float]
    checkpoint_path: Optional[str] = None
    test_results: Dict[str, EvaluationResult] = field(default_factory=dict)


def load_sources(cfg: TrainConfig) -> Dict[str, List[SamplePair]]:
    """Samples per source, resized to the network input side"""
    if not cfg.sources:
        synth = synth_generate(SyntheticConfig(count=cfg.synthetic_count, side=cfg.input_side, seed=cfg.seed))
        return {SYNTHETIC_SOURCE: synth}
    loaded = {}
    for name, path in cfg.sources:
        dataset = load_dataset(path, source=name, workers=cfg.workers)
        loaded[name] = [resize_pair(s, cfg.input_side) for s in dataset.samples]
    return loaded


def prepare_data(cfg: TrainConfig, samples_by_source: Optional[Dict[str, List[SamplePair]]] = None,
                 cross_validation: bool = False) -> Tuple[DataBundle, Split]:
    """Split per the configured scenario; augment training data only"""
    samples_by_source = samples_by_source or load_sources(cfg)
    manifests = {name: manifest_from_samples(name, samples) for name, samples in samples_by_source.items()}
    split = scenario_split(cfg.scenario_spec(cross_validation), manifests)
    lookup = {name: {s.sample_id: s for s in samples} for name, samples in samples_by_source.items()}

    train = resolve(split.train, lookup)
    if cfg.augment:
        train = augment_dataset(train, include_original=True, workers=cfg.workers)
    bundle = DataBundle(
        train=train,
        validation=resolve(split.validation, lookup),
        test={source: resolve(refs, lookup) for source, refs in split.test_by_source().items()},
    )
    if not bundle.train or not bundle.validation:
        raise DatasetError(f"scenario needs non-empty train and validation sets, got {len(bundle.train)}/{len(bundle.validation)}")
    return bundle, split


def shuffled_batches(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffled index batches; a trailing single-item batch joins the previous one"""
    order = rng.permutation(count)
    batches = [order[i:i + batch_size] for i in range(0, count, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


LossFn = Callable[[Tensor, Tensor], Tensor]


def _phase1_loss(params, model_cfg, tversky: TverskyParams) -> LossFn:
    def loss(images, masks):
        p1 = unet1_forward(images, params, model_cfg, training=True).probability
        return tversky_loss(p1, masks, tversky)
    return loss


def _phase2_loss(params, model_cfg, tversky: TverskyParams, freeze_unet1: bool = False) -> LossFn:
    def loss(images, masks):
        out = coupled_forward(images, params, model_cfg, training=True, unet1_training=not freeze_unet1)
        return coupled_loss(out.p1, out.p2, masks, tversky)
    return loss


def train_phase(phase: int, params: CoupledNetParams, model_cfg: CoupledNetConfig, named_params,
                loss_fn: LossFn, data: DataBundle, cfg: TrainConfig, rng: np.random.Generator,
                runlog: RunLog) -> Tuple[float, int, SGD]:
    """Run one phase in place; returns (best val mDice, epochs run, optimizer)"""
    optimizer = SGD(list(named_params), cfg.lr, cfg.momentum)
    head = "p1" if phase == 1 else "p2"
    best, stale, epochs = -math.inf, 0, 0
    best_state = snapshot(params)
    best_velocities = [v.copy() for v in optimizer.state.velocities]

    logger.info(f"phase {phase}: {len(optimizer.params)} parameter tensors, {len(data.train)} training samples")
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        losses = []
        for idx in shuffled_batches(len(data.train), cfg.batch_size, rng):
            images, masks = stack_batch([data.train[i] for i in idx])
            with OpGraph() as graph:
                loss = loss_fn(Tensor(images), Tensor(masks))
            value = loss.item()
            if not math.isfinite(value):
                runlog.append("diverged", phase=phase, epoch=epoch)
                raise TrainingDivergedError(phase, epoch)
            optimizer.zero_grad()
            backward(graph, loss)
            optimizer.step()
            losses.append(value)

        val = validation_dice(params, model_cfg, data.validation, cfg.threshold, head, cfg.batch_size)
        record = EpochRecord(
            phase=phase,
            epoch=epoch,
            train_loss=math.fsum(losses) / len(losses),
            val_mdice=val.mean["dice"],
            val_miou=val.mean["iou"],
            seconds=time.perf_counter() - start,
        )
        runlog.append("epoch", **asdict(record))
        logger.info(
            f"phase {phase} epoch {epoch}: loss {record.train_loss:.4f}, "
            f"val mDice {record.val_mdice:.4f}, mIoU {record.val_miou:.4f} ({record.seconds:.1f}s)"
        )
        epochs = epoch

        if record.val_mdice > best:
            best, stale = record.val_mdice, 0
            best_state = snapshot(params)
            best_velocities = [v.copy() for v in optimizer.state.velocities]
        else:
            stale += 1
        if stale >= cfg.patience:
            logger.warning(f"phase {phase}: stopping after epoch {epoch} ({stale} epochs without improvement)")
            break

    restore(params, best_state)
    optimizer.state.velocities = best_velocities
    return best, epochs, optimizer


def train_two_phase(cfg: TrainConfig, data: DataBundle, output_dir: Optional[str] = None) -> TrainResult:
    output_dir = cfg.output_dir if output_dir is None else output_dir
    with precision(cfg.precision):
        model_cfg = cfg.model_config()
        runlog = RunLog(os.path.join(output_dir, RUNLOG_NAME) if output_dir else None)
        runlog.append("config", **{k: format_value(v) for k, v in cfg.as_dict().items()})
        log_config(cfg)

        params = init_coupled_net(model_cfg, np.random.default_rng([cfg.seed, 0]))
        shuffle_rng = np.random.default_rng([cfg.seed, 1])
        tversky = cfg.tversky()
        best: Dict[int, float] = {}
        checkpoint_path = None

        best[1], epochs, optimizer = train_phase(1, params, model_cfg, params.unet1_parameters(),
                                                 _phase1_loss(params, model_cfg, tversky), data, cfg, shuffle_rng, runlog)
        if output_dir:
            checkpoint_path = os.path.join(output_dir, PHASE1_CHECKPOINT)
            save_checkpoint(checkpoint_path, capture(cfg, params, optimizer.state, phase=1, epoch=epochs, best_mdice=best[1]))

        if model_cfg.enable_second_unet:
            named = params.non_unet1_parameters() if cfg.freeze_unet1 else list(params.named_parameters())
            best[2], epochs, optimizer = train_phase(2, params, model_cfg, named,
                                                     _phase2_loss(params, model_cfg, tversky, cfg.freeze_unet1), data, cfg, shuffle_rng, runlog)
            if output_dir:
                checkpoint_path = os.path.join(output_dir, BEST_CHECKPOINT)
                save_checkpoint(checkpoint_path, capture(cfg, params, optimizer.state, phase=2, epoch=epochs, best_mdice=best[2]))
        else:
            logger.info("second UNet disabled; skipping phase 2")
            if output_dir:
                checkpoint_path = os.path.join(output_dir, BEST_CHECKPOINT)
                save_checkpoint(checkpoint_path, capture(cfg, params, optimizer.state, phase=1, epoch=epochs, best_mdice=best[1]))

        result = TrainResult(params=params, model_config=model_cfg, runlog=runlog, best_mdice=best,
                             checkpoint_path=checkpoint_path)
        for source, samples in data.test.items():
            if not samples:
                continue
            evaluation = evaluate(params, model_cfg, samples, cfg.threshold, name=f"test_{source}", batch_size=cfg.batch_size)
            result.test_results[source] = evaluation
            runlog.append("report", source=source, mean=evaluation.final.mean, std=evaluation.final.std,
                          auxiliary_mean=evaluation.auxiliary.mean,
                          auc=evaluation.curve.auc if evaluation.curve else None,
                          map=evaluation.curve.average_precision if evaluation.curve else None)
            if output_dir:
                write_report(output_dir, evaluation.final, evaluation.curve)
                write_report(output_dir, evaluation.auxiliary)
    return result


@dataclass
class CrossValidationResult:
    folds: List[Dict[str, float]]
    mean: Dict[str, float]
    std: Dict[str, float]


def cross_validate(cfg: TrainConfig,
                   samples_by_source: Optional[Dict[str, List[SamplePair]]] = None) -> CrossValidationResult:
    """Train and test once per fold (cfg.folds of them); report per-fold means and their mean/std across folds"""
    samples_by_source = samples_by_source or load_sources(cfg)
    per_fold = []
    for fold in range(cfg.folds):
        fold_cfg = replace(cfg, fold=fold, output_dir=os.path.join(cfg.output_dir, f"fold_{fold}"))
        data, _ = prepare_data(fold_cfg, samples_by_source, cross_validation=True)
        result = train_two_phase(fold_cfg, data)
        (evaluation,) = result.test_results.values()
        per_fold.append(dict(evaluation.final.mean))
        logger.info(f"fold {fold}: " + ", ".join(f"{k}={v:.4f}" for k, v in per_fold[-1].items()))

    mean, std = {}, {}
    for metric in METRIC_NAMES:
        values = [f[metric] for f in per_fold]
        mean[metric] = math.fsum(values) / len(values)
        std[metric] = math.sqrt(math.fsum((v - mean[metric]) ** 2 for v in values) / (len(values) - 1)) if len(values) > 1 else 0.0
    return CrossValidationResult(folds=per_fold, mean=mean, std=std)
