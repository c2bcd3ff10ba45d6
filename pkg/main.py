#!/usr/bin/env python3
"""
polypnet command-line entry point.

    python main.py train      [--config FILE] [--key value ...]
    python main.py eval       --checkpoint CKPT [--data DIR] [--oracle]
    python main.py infer      --checkpoint CKPT --image IMG --out MASK [--attention-out MAP]
    python main.py gradcheck  [--scale ops|blocks|full]
    python main.py synth      --out DIR [--count N] [--side S] [--seed N]
    python main.py folds      --data DIR --out DIR [--k 5] [--seed N]
    python main.py curves     --checkpoint CKPT [--data DIR] --out DIR
    python main.py crossval   [--config FILE] [--key value ...]
    python main.py complexity [--config FILE | --checkpoint CKPT]

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 gradient check failure.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from dotenv import load_dotenv

load_dotenv()

# BLAS thread counts must be fixed before numpy loads
THREADS = os.getenv("POLYPNET_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ[_var] = THREADS

import numpy as np  # noqa: E402

from polypnet.checkpoint import restore_model  # noqa: E402
from polypnet.complexity import estimate_flops_params, measure_inference  # noqa: E402
from polypnet.config import (  # noqa: E402
    TrainConfig,
    add_config_arguments,
    load_config_file,
    parse_config_text,
    resolve_config,
)
from polypnet.coupled_net import coupled_forward, init_coupled_net  # noqa: E402
from polypnet.dataset import (  # noqa: E402
    build_manifest,
    load_dataset,
    nearest_indices,
    resize_bilinear_array,
    resize_pair,
    write_dataset,
)
from polypnet.errors import ConfigError, PolypNetError  # noqa: E402
from polypnet.evaluation import evaluate  # noqa: E402
from polypnet.gradcheck import SUITES, run_suite  # noqa: E402
from polypnet.imageio import read_rgb, to_uint8, write_image_uint8, write_mask  # noqa: E402
from polypnet.reports import write_curves, write_report  # noqa: E402
from polypnet.scenarios import make_folds, write_folds, write_manifest  # noqa: E402
from polypnet.synthetic import SyntheticConfig, synth_generate  # noqa: E402
from polypnet.tensor import Tensor, precision  # noqa: E402
from polypnet.trainer import cross_validate, load_sources, prepare_data, train_two_phase  # noqa: E402

LOG_DIR = os.getenv("POLYPNET_LOG_DIR", "logs")
LOG_LEVEL = os.getenv("POLYPNET_LOG_LEVEL", "INFO").upper()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFICATION = 3

# keys that may differ from the configuration embedded in a checkpoint
RUN_KEYS = ("threshold", "batch_size", "workers", "sources", "scenario", "fold", "output_dir", "synthetic_count")
METRIC_LABELS = {"dice": "mDice", "iou": "mIoU", "recall": "Recall", "precision": "Precision"}

logger = logging.getLogger("polypnet")


def configure_logging():
    os.makedirs(LOG_DIR, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(LOG_DIR, 'polypnet.log')),
            logging.StreamHandler()
        ]
    )


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to exit code 1"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _flag_overrides(args) -> dict:
    values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key in TrainConfig.keys():
        flag = getattr(args, f"cfg_{key}", None)
        if flag is not None:
            values[key] = flag
    return values


def load_checkpoint_run(args):
    """(config, params) from --checkpoint, with run-level keys overridable"""
    cfg, params, _ = restore_model(args.checkpoint)
    overrides = _flag_overrides(args)
    locked = sorted(set(overrides) - set(RUN_KEYS))
    if locked:
        raise ConfigError(f"cannot override architecture keys of a checkpoint: {', '.join(locked)}")
    if overrides:
        cfg = TrainConfig.from_strings({**parse_config_text(cfg.to_text(), "checkpoint"), **overrides})
    return cfg, params


def evaluation_sets(cfg: TrainConfig, data_dir=None, source=""):
    """{source: samples}: one dataset directory, or the configured scenario's test sets"""
    if data_dir:
        dataset = load_dataset(data_dir, source=source, workers=cfg.workers)
        return {dataset.manifest.source: [resize_pair(s, cfg.input_side) for s in dataset.samples]}
    bundle, _ = prepare_data(replace(cfg, augment=False))
    return {name: samples for name, samples in bundle.test.items() if samples}


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args)
    data, split = prepare_data(cfg)
    for name, refs in (("train", split.train), ("validation", split.validation), ("test", split.test)):
        with open(_ensure(os.path.join(cfg.output_dir, f"{name}_ids.txt")), "w") as f:
            f.write("".join(f"{r.source}/{r.sample_id}\n" for r in refs))
    result = train_two_phase(cfg, data)

    print("\n🎯 TRAINING SUMMARY:")
    for phase, best in sorted(result.best_mdice.items()):
        print(f"  Phase {phase} best validation mDice: {best:.4f}")
    print(f"  Checkpoint: {result.checkpoint_path}")
    for source, evaluation in result.test_results.items():
        mean = evaluation.final.mean
        print(f"  Test {source}: mDice {mean['dice']:.4f}, mIoU {mean['iou']:.4f}, "
              f"recall {mean['recall']:.4f}, precision {mean['precision']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.checkpoint:
        cfg, params = load_checkpoint_run(args)
    elif args.oracle:
        cfg, params = resolve_config(args.config, args), None
    else:
        raise ConfigError("eval needs --checkpoint (or --oracle)")
    out_dir = args.out or (os.path.dirname(args.checkpoint) if args.checkpoint else cfg.output_dir)

    print(f"\n📊 EVALUATION (threshold {cfg.threshold}):")
    with precision(cfg.precision):
        for source, samples in evaluation_sets(cfg, args.data, args.source).items():
            evaluation = evaluate(params, cfg.model_config(), samples, cfg.threshold, name=f"eval_{source}",
                                  batch_size=cfg.batch_size, oracle=args.oracle)
            write_report(out_dir, evaluation.final, evaluation.curve)
            write_report(out_dir, evaluation.auxiliary)
            mean, std = evaluation.final.mean, evaluation.final.std
            print(f"  {source} ({len(samples)} images):")
            for metric, label in METRIC_LABELS.items():
                print(f"    {label}: {mean[metric]:.4f} ± {std[metric]:.4f}")
            if evaluation.curve is not None:
                print(f"    AUC: {evaluation.curve.auc:.4f}  MAP: {evaluation.curve.average_precision:.4f}")
    print(f"  Reports written to {out_dir}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg, params = load_checkpoint_run(args)
    threshold = cfg.threshold
    model_cfg = cfg.model_config()
    if args.attention_out and not model_cfg.enable_attention_gates:
        raise ConfigError("--attention-out needs a model with attention gates")

    image = read_rgb(args.image)
    height, width = image.shape[:2]
    side = model_cfg.input_side
    resized = np.clip(resize_bilinear_array(image, side, side), 0.0, 1.0)
    with precision(cfg.precision):
        out = coupled_forward(Tensor(resized.transpose(2, 0, 1)[None]), params, model_cfg, training=False)

    mask = out.p2.data[0, 0] >= threshold
    rows, cols = nearest_indices(side, height), nearest_indices(side, width)
    write_mask(args.out, mask[rows][:, cols])
    logger.info(f"wrote mask {args.out} ({height}x{width}, {int(mask.sum())} foreground pixels at {side}x{side})")
    print(f"✅ Mask written to {args.out}")

    if args.attention_out:
        alpha = out.attention_map.data[0, 0]
        alpha = resize_bilinear_array(alpha[:, :, None], height, width)[:, :, 0]
        write_image_uint8(args.attention_out, to_uint8(alpha))
        print(f"✅ Attention map written to {args.attention_out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scales = SUITES if args.scale == "all" else (args.scale,)
    failed = []
    for scale in scales:
        report = run_suite(scale, seed=args.seed, max_coords=args.max_coords)
        print(f"\n🔬 GRADIENT CHECK ({scale}):")
        for result in report.results:
            print(f"  {result.describe()}")
        failed += report.failures()
    if failed:
        logger.error(f"gradient check failed for: {', '.join(r.name for r in failed)}")
        return EXIT_VERIFICATION
    print("✅ All gradient checks passed")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(count=args.count, side=args.side, seed=args.seed)
    samples = synth_generate(cfg)
    write_dataset(args.out, samples, extension=args.ext)
    coverage = np.mean([s.mask.mean() for s in samples])
    print(f"🧪 Wrote {len(samples)} synthetic pairs ({args.side}x{args.side}) to {args.out}")
    print(f"  Mean polyp coverage: {coverage:.1%}")
    return EXIT_OK


def cmd_folds(args) -> int:
    manifest, pairing = build_manifest(args.data, args.source)
    folds = make_folds(len(manifest), args.k, args.seed)
    write_manifest(os.path.join(args.out, "manifest"), manifest)
    paths = write_folds(args.out, manifest.ids, folds)
    print(f"📁 {len(manifest)} samples from {args.data} (checksum {manifest.checksum[:12]})")
    if pairing.count:
        print(f"  Excluded {pairing.count} unpaired files")
    for path, fold in zip(paths, folds):
        print(f"  {path}: {len(fold)} ids")
    return EXIT_OK


def cmd_curves(args) -> int:
    cfg, params = load_checkpoint_run(args)
    with precision(cfg.precision):
        for source, samples in evaluation_sets(cfg, args.data, args.source).items():
            evaluation = evaluate(params, cfg.model_config(), samples, cfg.threshold, name=f"curves_{source}",
                                  batch_size=cfg.batch_size)
            if evaluation.curve is None:
                raise PolypNetError(f"no curves for '{source}': its masks are all background or all polyp")
            for path in write_curves(args.out, evaluation.curve, source):
                print(f"📈 {path}")
            print(f"  {source}: AUC {evaluation.curve.auc:.4f}, MAP {evaluation.curve.average_precision:.4f}")
    return EXIT_OK


def cmd_crossval(args) -> int:
    cfg = resolve_config(args.config, args)
    result = cross_validate(cfg, load_sources(cfg))
    print(f"\n🔁 {cfg.folds}-FOLD CROSS-VALIDATION:")
    for j, fold in enumerate(result.folds):
        print(f"  Fold {j}: " + ", ".join(f"{k} {v:.4f}" for k, v in fold.items()))
    print("  Mean ± std: " + ", ".join(f"{k} {result.mean[k]:.4f} ± {result.std[k]:.4f}" for k in result.mean))
    return EXIT_OK


def cmd_complexity(args) -> int:
    if args.checkpoint:
        cfg, params = load_checkpoint_run(args)
    else:
        cfg = resolve_config(args.config, args)
        with precision(cfg.precision):
            params = init_coupled_net(cfg.model_config(), np.random.default_rng([cfg.seed, 0]))
    model_cfg = cfg.model_config()
    cost = estimate_flops_params(model_cfg, batch=1)
    with precision(cfg.precision):
        timing = measure_inference(params, model_cfg, batch=1, repeats=args.repeats, seed=cfg.seed)

    print(f"\n⚙️ MODEL COMPLEXITY ({cfg.variant}, {cfg.backbone}, input {model_cfg.input_side}):")
    print(f"  Parameters: {cost.params:,}")
    print(f"  FLOPs: {cost.flops:,} ({cost.gflops:.3f} GFLOPs)")
    for kind, flops in sorted(cost.by_kind().items(), key=lambda kv: -kv[1]):
        print(f"    {kind}: {flops:,}")
    print(f"  Inference: {timing.seconds_per_image:.4f} s/image ({timing.fps:.1f} FPS)")
    return EXIT_OK


def _ensure(path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="polypnet", description="Coupled attention-gated UNet polyp segmentation")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name, handler, help_text, config=False):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        if config:
            p.add_argument("--config", help="plain-text key = value configuration file")
            add_config_arguments(p)
        return p

    command("train", cmd_train, "two-phase training on the configured scenario", config=True)

    p = command("eval", cmd_eval, "evaluate a checkpoint (metrics, ROC/PR curves)", config=True)
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset directory (default: the checkpoint's scenario test sets)")
    p.add_argument("--source", default="", help="source name for --data")
    p.add_argument("--out", help="report directory (default: next to the checkpoint)")
    p.add_argument("--oracle", action="store_true", help="score the ground-truth masks as predictions")

    p = command("infer", cmd_infer, "segment one image", config=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output mask path (.pgm, .png, ...)")
    p.add_argument("--attention-out", dest="attention_out", help="also write the finest attention map here")

    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient checks")
    p.add_argument("--scale", choices=SUITES + ("all",), default="ops")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-coords", dest="max_coords", type=int, help="coordinates sampled per input")

    p = command("synth", cmd_synth, "write a synthetic polyp dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ext", default=".ppm", help="image extension (.ppm writes .pgm masks)")

    p = command("folds", cmd_folds, "emit k-fold id lists for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--source", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = command("curves", cmd_curves, "export ROC and PR curve points as CSV", config=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--source", default="")
    p.add_argument("--out", required=True)

    command("crossval", cmd_crossval, "train and test every fold of a cross-validation scenario", config=True)

    p = command("complexity", cmd_complexity, "parameter count, FLOPs and inference speed", config=True)
    p.add_argument("--checkpoint")
    p.add_argument("--repeats", type=int, default=3)
    return parser


def main(argv=None) -> int:
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except PolypNetError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
