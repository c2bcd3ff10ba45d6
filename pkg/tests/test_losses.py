import numpy as np
import pytest

from polypnet.errors import ConfigError, ShapeError
from polypnet.gradcheck import check_gradients
from polypnet.losses import TverskyParams, coupled_loss, tversky_index, tversky_loss
from polypnet.tensor import Tensor

HALF = TverskyParams(alpha=0.5, beta=0.5)


def overlap_grid():
    """|P| = 6, |G| = 4, overlap 3 on a 4x4 grid"""
    p = np.zeros((4, 4))
    g = np.zeros((4, 4))
    p[0, :] = 1
    p[1, :2] = 1
    g[0, 1:] = 1
    g[3, 3] = 1
    return p, g


def test_perfect_prediction():
    g = np.zeros((8, 8))
    g[2:5, 3:6] = 1
    assert tversky_index(Tensor(g), g).item() == pytest.approx(1.0, abs=1e-9)
    assert coupled_loss(Tensor(g), Tensor(g), g).item() == pytest.approx(0.0, abs=1e-9)


def test_disjoint_maps():
    p = np.zeros((4, 4))
    g = np.zeros((4, 4))
    p[0] = 1
    g[3] = 1
    assert tversky_index(Tensor(p), g).item() == pytest.approx(0.0, abs=1e-6)


def test_overlap_grid_matches_dice():
    p, g = overlap_grid()
    assert p.sum() == 6 and g.sum() == 4 and (p * g).sum() == 3
    assert tversky_index(Tensor(p), g, HALF).item() == pytest.approx(0.6, abs=1e-6)


def test_one_perfect_one_worthless_head():
    p, g = overlap_grid()
    worthless = 1.0 - g
    loss = coupled_loss(Tensor(worthless), Tensor(g), g)
    assert loss.item() == pytest.approx(1.0, abs=1e-6)


def test_half_weights_equal_soft_dice(double, rng):
    for _ in range(1000):
        prob = rng.random((2, 1, 6, 6))
        target = (rng.random((2, 1, 6, 6)) > 0.6).astype(np.float64)
        tp = (prob * target).sum()
        soft_dice = 2 * tp / (tp + (prob * (1 - target)).sum() + ((1 - prob) * target).sum() + tp)
        smooth = TverskyParams(alpha=0.5, beta=0.5, smooth=1e-12)
        assert tversky_index(Tensor(prob), target, smooth).item() == pytest.approx(soft_dice, abs=1e-9)


def test_joint_permutation_invariance(double, rng):
    prob = rng.random(36)
    target = (rng.random(36) > 0.5).astype(np.float64)
    order = rng.permutation(36)
    a = tversky_index(Tensor(prob), target).item()
    b = tversky_index(Tensor(prob[order]), target[order]).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_larger_beta_lowers_index_with_false_negatives(double, rng):
    prob = rng.random((6, 6)) * 0.8
    target = (rng.random((6, 6)) > 0.5).astype(np.float64)
    values = [tversky_index(Tensor(prob), target, TverskyParams(alpha=0.3, beta=b)).item() for b in (0.3, 0.7, 1.2)]
    assert values[0] > values[1] > values[2]


def test_loss_is_bounded(rng):
    for _ in range(10):
        p1, p2 = rng.random((2, 1, 8, 8)), rng.random((2, 1, 8, 8))
        g = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64)
        assert 0.0 <= coupled_loss(Tensor(p1), Tensor(p2), g).item() <= 2.0
        assert 0.0 <= tversky_loss(Tensor(p1), g).item() <= 1.0


def test_coupled_loss_gradient(double, rng):
    g = (rng.random((2, 1, 5, 5)) > 0.5).astype(np.float64)
    p1 = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 5, 5)))
    p2 = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 5, 5)))
    result = check_gradients(lambda a, b: coupled_loss(a, b, g), [p1, p2], name="coupled loss")
    assert result.passed, result.describe()


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        tversky_index(Tensor(np.zeros((4, 4))), np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        coupled_loss(Tensor(np.zeros((4, 4))), Tensor(np.zeros((4, 4))), np.zeros((2, 4)))


@pytest.mark.parametrize("kwargs", [{"alpha": -0.1}, {"alpha": 0.0, "beta": 0.0}, {"smooth": 0.0}])
def test_invalid_params(kwargs):
    with pytest.raises(ConfigError):
        TverskyParams(**kwargs)
