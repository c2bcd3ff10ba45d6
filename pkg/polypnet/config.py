"""
Run configuration.

A run is described by TrainConfig. Values come from, in increasing
priority: the dataclass defaults, a plain-text file of `key = value` lines
(`#` starts a comment), and `--key value` command-line flags. Unknown keys
are errors.

Lists are comma-separated (`stage_blocks = 1,1,2,2,1`), booleans accept
true/false/yes/no/1/0, and optional values accept `none`.
"""

import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

from .backbone import EncoderConfig
from .coupled_net import VARIANTS, CoupledNetConfig
from .errors import ConfigError
from .losses import TverskyParams
from .scenarios import ScenarioSpec, get_scenario
from .synthetic import SOURCE_NAME as SYNTHETIC_SOURCE
from .tensor import PRECISIONS

logger = logging.getLogger(__name__)

TRUE_WORDS = ("true", "yes", "1", "on")
FALSE_WORDS = ("false", "no", "0", "off")


def parse_bool(text: str) -> bool:
    word = text.strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def parse_int_tuple(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def parse_sources(text: str) -> Tuple[Tuple[str, str], ...]:
    """`name=path,name=path` -> ((name, path), ...)"""
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ValueError(f"source entries look like name=path, got '{item}'")
        name, path = item.split("=", 1)
        pairs.append((name.strip(), path.strip()))
    return tuple(pairs)


def optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse_optional(text: str):
        return None if text.strip().lower() in ("", "none", "null") else parse(text)
    return parse_optional


def _key(default, parse, help_text, **extra):
    return field(default=default, metadata={"parse": parse, "help": help_text, **extra})


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ",".join(f"{n}={p}" for n, p in value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    lr: float = _key(5e-3, float, "SGD learning rate")
    momentum: float = _key(0.9, float, "SGD momentum")
    batch_size: int = _key(4, int, "images per optimizer step")
    max_epochs: int = _key(30, int, "epoch limit per training phase")
    patience: int = _key(10, int, "epochs without validation mDice improvement before stopping")
    seed: int = _key(0, int, "seed for initialisation, shuffling and splits")
    # loss and evaluation
    tversky_alpha: float = _key(0.3, float, "Tversky false-positive weight")
    tversky_beta: float = _key(0.7, float, "Tversky false-negative weight")
    tversky_smooth: float = _key(1e-6, float, "Tversky smoothing epsilon")
    threshold: float = _key(0.5, float, "binarisation threshold for metrics and masks")
    # architecture
    input_side: int = _key(64, int, "network input side (multiple of 32)")
    width: int = _key(8, int, "base channel width for the desk-scale preset")
    stem_width: Optional[int] = _key(None, optional(int), "stem channels (default: width)")
    stage_widths: Optional[Tuple[int, ...]] = _key(None, optional(parse_int_tuple), "5 encoder stage widths")
    stage_blocks: Tuple[int, ...] = _key((1, 1, 1, 1, 1), parse_int_tuple, "5 encoder stage block counts")
    decoder_widths: Optional[Tuple[int, ...]] = _key(None, optional(parse_int_tuple), "5 decoder widths")
    cardinality: int = _key(2, int, "split-attention cardinality K")
    radix: int = _key(2, int, "split-attention radix R")
    backbone: str = _key("resnest", str, "encoder block family: resnest or resnet")
    variant: str = _key("ag-cunet", str, f"model variant: {', '.join(VARIANTS)}")
    enable_attention_gates: Optional[bool] = _key(None, optional(parse_bool), "override the variant's gate flag")
    enable_cross_connections: Optional[bool] = _key(None, optional(parse_bool), "override cross-UNet skips")
    enable_second_unet: Optional[bool] = _key(None, optional(parse_bool), "override the second UNet")
    bridge_mode: str = _key("multiply", str, "bridge between UNets: multiply or concat")
    bridge_source: str = _key("probability", str, "UNet-1 output fed to the bridge: probability or logits")
    gate_inter_channels: Optional[int] = _key(None, optional(int), "attention gate intermediate width")
    # run
    freeze_unet1: bool = _key(False, parse_bool, "keep UNet-1 fixed during phase 2")
    augment: bool = _key(True, parse_bool, "apply the 12-variant augmentation to training data")
    scenario: int = _key(0, int, "evaluation scenario 0-6")
    fold: int = _key(0, int, "test fold for cross-validation scenarios")
    folds: int = _key(5, int, "k for cross-validation scenarios")
    sources: Tuple[Tuple[str, str], ...] = _key((), parse_sources, "datasets as name=path,name=path")
    synthetic_count: int = _key(200, int, "synthetic samples generated when no sources are given")
    output_dir: str = _key("runs/latest", str, "directory for checkpoints, logs and reports")
    precision: str = _key("single", str, "tensor precision: single or double")
    workers: int = _key(1, int, "threads for loading and augmentation")

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got '{self.precision}'")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}', expected one of {sorted(VARIANTS)}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch_size and max_epochs must be >= 1 and patience >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.workers < 1 or self.width < 1:
            raise ConfigError("workers and width must be >= 1")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        self.model_config()
        self.tversky()

    def model_config(self) -> CoupledNetConfig:
        w = self.width
        encoder = EncoderConfig(
            stage_widths=self.stage_widths or (w, 2 * w, 4 * w, 8 * w, 16 * w),
            stage_blocks=self.stage_blocks,
            cardinality=self.cardinality,
            radix=self.radix,
            stem_width=self.stem_width or w,
            backbone=self.backbone,
        )
        cfg = CoupledNetConfig(
            input_side=self.input_side,
            encoder=encoder,
            decoder_widths=self.decoder_widths or (8 * w, 4 * w, 2 * w, w, w),
            bridge_mode=self.bridge_mode,
            bridge_source=self.bridge_source,
            gate_inter_channels=self.gate_inter_channels,
        ).with_variant(self.variant)
        overrides = {
            name: getattr(self, name)
            for name in ("enable_attention_gates", "enable_cross_connections", "enable_second_unet")
            if getattr(self, name) is not None
        }
        return replace(cfg, **overrides) if overrides else cfg

    def tversky(self) -> TverskyParams:
        return TverskyParams(alpha=self.tversky_alpha, beta=self.tversky_beta, smooth=self.tversky_smooth)

    def scenario_spec(self, cross_validation: bool = False) -> ScenarioSpec:
        names = [name for name, _ in self.sources] or [SYNTHETIC_SOURCE]
        return get_scenario(self.scenario, names, fold=self.fold, seed=self.seed,
                            cross_validation=cross_validation, folds=self.folds)

    def as_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_strings(cls, values: Dict[str, str]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        parsed = {}
        for key, text in values.items():
            try:
                parsed[key] = known[key].metadata["parse"](text)
            except ValueError as e:
                raise ConfigError(f"bad value for '{key}': {e}") from e
        try:
            return cls(**parsed)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_text(cls, text: str, origin: str = "<text>") -> "TrainConfig":
        return cls.from_strings(parse_config_text(text, origin))


def parse_config_text(text: str, origin: str = "<text>") -> Dict[str, str]:
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{number}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{number}: missing key")
        values[key] = value
    return values


def load_config_file(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config file '{path}' not found")
    with open(path) as f:
        return parse_config_text(f.read(), origin=path)


def add_config_arguments(parser):
    """Register --<key> for every TrainConfig key (values parsed later)"""
    group = parser.add_argument_group("run configuration")
    for f in fields(TrainConfig):
        default = format_value(f.default)
        group.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", default=None, metavar="VALUE",
                           help=f"{f.metadata['help']} (default: {default})")


def resolve_config(config_path: Optional[str], args=None) -> TrainConfig:
    values = load_config_file(config_path) if config_path else {}
    if args is not None:
        for key in TrainConfig.keys():
            flag = getattr(args, f"cfg_{key}", None)
            if flag is not None:
                values[key] = flag
    cfg = TrainConfig.from_strings(values)
    return cfg


def log_config(cfg: TrainConfig):
    for key, value in cfg.as_dict().items():
        logger.info(f"config {key} = {format_value(value)}")
