import json
import os

import numpy as np
import pytest

from polypnet.checkpoint import load_checkpoint
from polypnet.config import TrainConfig
from polypnet.errors import DatasetError
from polypnet.trainer import (
    BEST_CHECKPOINT,
    PHASE1_CHECKPOINT,
    RUNLOG_NAME,
    cross_validate,
    prepare_data,
    shuffled_batches,
    train_two_phase,
)


def tiny_config(tmp_path, **overrides):
    values = dict(width=4, input_side=32, synthetic_count=10, max_epochs=1, patience=0, batch_size=2,
                  augment=False, output_dir=str(tmp_path))
    values.update(overrides)
    return TrainConfig(**values)


def test_shuffled_batches_cover_everything(rng):
    batches = shuffled_batches(9, 4, rng)
    assert sorted(np.concatenate(batches).tolist()) == list(range(9))
    assert [len(b) for b in batches] == [4, 5]


def test_prepare_data_merged_split(tmp_path):
    data, split = prepare_data(tiny_config(tmp_path))
    assert split.sizes() == (8, 1, 1)
    assert len(data.train) == 8 and len(data.validation) == 1
    assert list(data.test) == ["synthetic"]


def test_prepare_data_augments_training_only(tmp_path):
    data, _ = prepare_data(tiny_config(tmp_path, augment=True))
    assert len(data.train) == 8 * 13
    assert len(data.validation) == 1


def test_prepare_data_needs_validation(tmp_path):
    with pytest.raises(DatasetError):
        prepare_data(tiny_config(tmp_path, synthetic_count=5))


def test_two_phase_run_writes_artifacts(tmp_path):
    cfg = tiny_config(tmp_path)
    data, _ = prepare_data(cfg)
    result = train_two_phase(cfg, data)

    epochs = result.runlog.epochs()
    assert [(r["phase"], r["epoch"]) for r in epochs] == [(1, 1), (2, 1)]
    assert set(result.best_mdice) == {1, 2}
    for name in (RUNLOG_NAME, PHASE1_CHECKPOINT, BEST_CHECKPOINT, "test_synthetic_metrics.csv",
                 "test_synthetic_aux_metrics.json"):
        assert os.path.isfile(tmp_path / name), name
    with open(tmp_path / RUNLOG_NAME) as f:
        kinds = [json.loads(line)["type"] for line in f]
    assert kinds[0] == "config" and kinds.count("epoch") == 2 and "report" in kinds
    assert load_checkpoint(result.checkpoint_path).metadata["phase"] == 2


def test_training_is_deterministic(tmp_path):
    cfg = tiny_config(tmp_path, max_epochs=2, patience=5)
    data, _ = prepare_data(cfg)
    first = train_two_phase(cfg, data, output_dir="")
    second = train_two_phase(cfg, data, output_dir="")
    assert first.runlog.losses() == second.runlog.losses()
    for (name, a), (_, b) in zip(first.params.named_parameters(), second.params.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=name)


def test_frozen_first_unet_keeps_phase_one_weights(tmp_path):
    cfg = tiny_config(tmp_path, freeze_unet1=True)
    data, _ = prepare_data(cfg)
    result = train_two_phase(cfg, data)
    phase1 = load_checkpoint(str(tmp_path / PHASE1_CHECKPOINT))
    for name, t in result.params.unet1_parameters():
        np.testing.assert_array_equal(t.data, phase1.params[name], err_msg=name)
    unet1_buffers = [(name, a) for name, a in result.params.named_buffers() if name.startswith("unet1.")]
    assert unet1_buffers
    for name, values in unet1_buffers:
        np.testing.assert_array_equal(values, phase1.buffers[name], err_msg=name)


def test_phase_two_starts_from_phase_one(tmp_path):
    cfg = tiny_config(tmp_path)
    data, _ = prepare_data(cfg)
    result = train_two_phase(cfg, data)
    phase1 = load_checkpoint(str(tmp_path / PHASE1_CHECKPOINT))
    final = dict(result.params.named_parameters())
    changed = [name for name, values in phase1.params.items()
               if name.startswith("unet1.") and not np.array_equal(values, final[name].data)]
    # phase 2 fine-tunes UNet-1 from its phase-1 weights by a small step
    assert changed
    for name in changed:
        assert np.abs(final[name].data - phase1.params[name]).max() < 1.0


def test_single_unet_skips_phase_two(tmp_path):
    cfg = tiny_config(tmp_path, variant="unet")
    data, _ = prepare_data(cfg)
    result = train_two_phase(cfg, data)
    assert {r["phase"] for r in result.runlog.epochs()} == {1}
    assert load_checkpoint(result.checkpoint_path).metadata["phase"] == 1


def test_cross_validation_runs_every_fold(tmp_path):
    cfg = tiny_config(tmp_path, synthetic_count=20)
    result = cross_validate(cfg)
    assert len(result.folds) == 5
    for fold in range(5):
        assert os.path.isfile(tmp_path / f"fold_{fold}" / BEST_CHECKPOINT)
    assert 0.0 <= result.mean["dice"] <= 1.0


@pytest.mark.slow
def test_synthetic_convergence(tmp_path):
    cfg = TrainConfig(width=8, input_side=64, synthetic_count=200, max_epochs=15, patience=10,
                      augment=False, output_dir=str(tmp_path))
    data, _ = prepare_data(cfg)
    result = train_two_phase(cfg, data)
    assert result.best_mdice[2] >= 0.85


@pytest.mark.slow
def test_phase_one_loss_settles_over_five_epoch_windows():
    cfg = TrainConfig(width=8, input_side=64, synthetic_count=200, max_epochs=15, patience=15,
                      augment=False, variant="attention-unet", output_dir="")
    data, _ = prepare_data(cfg)
    result = train_two_phase(cfg, data)
    losses = [r["train_loss"] for r in result.runlog.epochs() if r["phase"] == 1]
    assert len(losses) >= 5
    for start in range(len(losses) - 4):
        window = losses[start:start + 5]
        assert window[0] >= window[-1], (start, window)
