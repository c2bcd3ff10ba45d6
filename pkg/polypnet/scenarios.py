"""
Evaluation protocols: k-fold partitions and the train/validation/test
scenarios.

    1  cvc-colondb + etis-larib -> cvc-clinicdb
    2  cvc-colondb              -> cvc-clinicdb
    3  cvc-clinicdb             -> etis-larib
    4  kvasir-seg + cvc-clinicdb merged, 80/10/10, test reported per source
    5  5-fold cross-validation on cvc-clinicdb
    6  5-fold cross-validation on kvasir-seg
    0  every configured source merged, 80/10/10 (desk-scale runs)

Cross-dataset and cross-validation scenarios hold out 10% of the training
pool as validation for early stopping.
"""

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import DatasetManifest
from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

DEFAULT_FOLDS = 5
VALIDATION_FRACTION = 0.1
TEST_FRACTION = 0.1

CROSS_DATASET = "cross-dataset"
MERGED = "merged"
CROSS_VALIDATION = "cross-validation"


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int
    protocol: str
    train_sources: Tuple[str, ...]
    test_sources: Tuple[str, ...] = ()
    folds: int = DEFAULT_FOLDS
    fold: int = 0
    seed: int = 0
    validation_fraction: float = VALIDATION_FRACTION
    test_fraction: float = TEST_FRACTION


SCENARIOS: Dict[int, ScenarioSpec] = {
    1: ScenarioSpec(1, CROSS_DATASET, ("cvc-colondb", "etis-larib"), ("cvc-clinicdb",)),
    2: ScenarioSpec(2, CROSS_DATASET, ("cvc-colondb",), ("cvc-clinicdb",)),
    3: ScenarioSpec(3, CROSS_DATASET, ("cvc-clinicdb",), ("etis-larib",)),
    4: ScenarioSpec(4, MERGED, ("kvasir-seg", "cvc-clinicdb")),
    5: ScenarioSpec(5, CROSS_VALIDATION, ("cvc-clinicdb",)),
    6: ScenarioSpec(6, CROSS_VALIDATION, ("kvasir-seg",)),
}


def get_scenario(scenario_id: int, sources: Sequence[str] = (), fold: int = 0, seed: int = 0,
                 cross_validation: bool = False, folds: int = DEFAULT_FOLDS) -> ScenarioSpec:
    """Resolve a scenario id.

    Id 0 merges the given sources 80/10/10, or with cross_validation runs
    k-fold on its single source. folds sets k for cross-validation scenarios.
    """
    if scenario_id == 0:
        if not sources:
            raise ConfigError("scenario 0 needs at least one configured source")
        if cross_validation:
            if len(sources) != 1:
                raise ConfigError(f"cross-validation needs exactly one source, got {list(sources)}")
            spec = ScenarioSpec(0, CROSS_VALIDATION, tuple(sources), folds=folds, fold=fold, seed=seed)
        else:
            return ScenarioSpec(0, MERGED, tuple(sources), fold=fold, seed=seed)
    elif scenario_id in SCENARIOS:
        spec = replace(SCENARIOS[scenario_id], fold=fold, seed=seed)
        if spec.protocol == CROSS_VALIDATION:
            spec = replace(spec, folds=folds)
    else:
        raise ConfigError(f"unknown scenario {scenario_id}, expected 0-6")
    if cross_validation and spec.protocol != CROSS_VALIDATION:
        raise ConfigError(f"scenario {scenario_id} is not a cross-validation scenario")
    if spec.protocol == CROSS_VALIDATION and not 0 <= fold < spec.folds:
        raise ConfigError(f"fold {fold} out of range for {spec.folds}-fold scenario {scenario_id}")
    return spec


@dataclass(frozen=True)
class SampleRef:
    source: str
    sample_id: str


@dataclass
class Split:
    train: List[SampleRef] = field(default_factory=list)
    validation: List[SampleRef] = field(default_factory=list)
    test: List[SampleRef] = field(default_factory=list)

    def test_by_source(self) -> "OrderedDict[str, List[SampleRef]]":
        groups: "OrderedDict[str, List[SampleRef]]" = OrderedDict()
        for ref in self.test:
            groups.setdefault(ref.source, []).append(ref)
        return groups

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def make_folds(count: int, k: int = DEFAULT_FOLDS, seed: int = 0) -> List[List[int]]:
    """Seeded shuffle of range(count), then round-robin into k sorted folds"""
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if count < k:
        raise DatasetError(f"cannot split {count} items into {k} folds")
    order = np.random.default_rng(seed).permutation(count)
    return [sorted(int(i) for i in order[j::k]) for j in range(k)]


def _refs(manifest: DatasetManifest) -> List[SampleRef]:
    return [SampleRef(manifest.source, i) for i in manifest.ids]


def _require(manifests: Mapping[str, DatasetManifest], names: Sequence[str]) -> List[DatasetManifest]:
    missing = [n for n in names if n not in manifests]
    if missing:
        raise DatasetError(f"unknown source(s) {missing}; loaded sources are {sorted(manifests)}")
    return [manifests[n] for n in names]


def _hold_out(pool: List[SampleRef], fraction: float, rng: np.random.Generator) -> Tuple[List[SampleRef], List[SampleRef]]:
    """Split pool into (kept, held_out) with floor(fraction * n) held out (at least 1 when n >= 2)"""
    n = len(pool)
    n_out = int(np.floor(fraction * n))
    if n >= 2:
        n_out = max(n_out, 1)
    order = rng.permutation(n)
    held = sorted(order[:n_out].tolist())
    kept = sorted(order[n_out:].tolist())
    return [pool[i] for i in kept], [pool[i] for i in held]


def scenario_split(spec: ScenarioSpec, manifests: Mapping[str, DatasetManifest]) -> Split:
    rng = np.random.default_rng([spec.seed, spec.scenario_id, spec.fold])

    if spec.protocol == CROSS_DATASET:
        train_pool = [r for m in _require(manifests, spec.train_sources) for r in _refs(m)]
        test = [r for m in _require(manifests, spec.test_sources) for r in _refs(m)]
        train, validation = _hold_out(train_pool, spec.validation_fraction, rng)
        split = Split(train=train, validation=validation, test=test)

    elif spec.protocol == MERGED:
        pool = [r for m in _require(manifests, spec.train_sources) for r in _refs(m)]
        n = len(pool)
        n_val = int(np.floor(spec.validation_fraction * n))
        n_test = int(np.floor(spec.test_fraction * n))
        order = rng.permutation(n)
        val_idx = sorted(order[:n_val].tolist())
        test_idx = sorted(order[n_val:n_val + n_test].tolist())
        train_idx = sorted(order[n_val + n_test:].tolist())
        split = Split(
            train=[pool[i] for i in train_idx],
            validation=[pool[i] for i in val_idx],
            test=[pool[i] for i in test_idx],
        )

    elif spec.protocol == CROSS_VALIDATION:
        (manifest,) = _require(manifests, spec.train_sources)
        refs = _refs(manifest)
        folds = make_folds(len(refs), spec.folds, spec.seed)
        test = [refs[i] for i in folds[spec.fold]]
        pool = [refs[i] for j, fold in enumerate(folds) if j != spec.fold for i in fold]
        pool.sort(key=lambda r: r.sample_id)
        train, validation = _hold_out(pool, spec.validation_fraction, rng)
        split = Split(train=train, validation=validation, test=test)

    else:
        raise ConfigError(f"unknown protocol '{spec.protocol}'")

    _check_disjoint(split)
    logger.info(f"scenario {spec.scenario_id} ({spec.protocol}): train/val/test = {split.sizes()}")
    return split


def _check_disjoint(split: Split):
    train, val, test = set(split.train), set(split.validation), set(split.test)
    overlap = (train & val) | (train & test) | (val & test)
    if overlap:
        example = sorted(overlap, key=lambda r: (r.source, r.sample_id))[0]
        raise DatasetError(f"{len(overlap)} samples appear in more than one split, e.g. {example}")


def write_manifest(path: str, manifest: DatasetManifest):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write("".join(f"{i}\n" for i in manifest.ids))


def write_folds(directory: str, ids: Sequence[str], folds: Sequence[Sequence[int]]) -> List[str]:
    """fold_0 .. fold_{k-1}, one sample id per line"""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for j, fold in enumerate(folds):
        path = os.path.join(directory, f"fold_{j}")
        with open(path, "w") as f:
            f.write("".join(f"{ids[i]}\n" for i in fold))
        paths.append(path)
    logger.info(f"wrote {len(folds)} fold files to {directory}")
    return paths


def read_id_list(path: str) -> List[str]:
    with open(path) as f:
        return [line.strip() for line in f if line.strip()]


def resolve(refs: Sequence[SampleRef], samples_by_source: Mapping[str, Mapping[str, object]]) -> List[object]:
    """Map SampleRefs to loaded samples, keeping ref order"""
    out = []
    for ref in refs:
        sample: Optional[object] = samples_by_source.get(ref.source, {}).get(ref.sample_id)
        if sample is None:
            raise DatasetError(f"sample '{ref.sample_id}' of source '{ref.source}' is not loaded")
        out.append(sample)
    return out
