import numpy as np
import pytest

from polypnet.coupled_net import init_coupled_net
from polypnet.errors import DatasetError
from polypnet.evaluation import evaluate, predict, report_from_maps, validation_dice
from polypnet.metrics import METRIC_NAMES


@pytest.fixture
def samples(rng, make_sample):
    return [make_sample(rng, side=32, sample_id=f"s{i}") for i in range(3)]


def test_oracle_scores_perfectly(toy_config, samples):
    result = evaluate(None, toy_config, samples, oracle=True)
    for metric in METRIC_NAMES:
        assert result.final.mean[metric] == 1.0
        assert result.auxiliary.mean[metric] == 1.0
    assert result.curve.auc == pytest.approx(1.0)
    assert result.curve.average_precision == pytest.approx(1.0)


def test_evaluation_is_deterministic(toy_config, samples):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    a = evaluate(params, toy_config, samples, batch_size=2)
    b = evaluate(params, toy_config, samples, batch_size=3)
    assert a.final.mean == pytest.approx(b.final.mean)
    assert [m.image_id for m in a.final.per_image] == ["s0", "s1", "s2"]
    assert a.auxiliary.name == "test_aux"


def test_predict_with_attention(toy_config, samples):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    preds = predict(params, toy_config, samples, batch_size=2, with_attention=True)
    assert [p.sample_id for p in preds] == ["s0", "s1", "s2"]
    for p in preds:
        assert p.p1.shape == p.p2.shape == p.attention.shape == (32, 32)
        assert 0.0 <= p.attention.min() and p.attention.max() <= 1.0


def test_validation_heads_agree_for_single_unet(toy_config, samples):
    cfg = toy_config.with_variant("unet")
    params = init_coupled_net(cfg, np.random.default_rng(0))
    p1 = validation_dice(params, cfg, samples, 0.5, "p1")
    p2 = validation_dice(params, cfg, samples, 0.5, "p2")
    assert p1.mean == p2.mean


def test_empty_set_is_rejected():
    with pytest.raises(DatasetError):
        report_from_maps([], 0.5, name="empty")
