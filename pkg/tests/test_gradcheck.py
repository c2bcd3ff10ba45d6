import numpy as np
import pytest

from polypnet import functional as F
from polypnet.errors import PolypNetError
from polypnet.gradcheck import TOLERANCE, check_gradients, relative_error, run_suite
from polypnet.layers import perturb_parameters
from polypnet.splat import SplatConfig, init_splat_block, split_attention_forward
from polypnet.tensor import Tensor


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_linear_function_is_nearly_exact(double, rng):
    x = Tensor(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))
    result = check_gradients(lambda x: (x * w).sum(), [x], name="linear")
    assert result.checked == 12
    assert result.max_rel_error < 1e-7


def test_conv_relu_sum(double, rng):
    x = Tensor(rng.normal(size=(2, 3, 5, 5)))
    k = Tensor(rng.normal(size=(4, 3, 3, 3)))
    result = check_gradients(lambda x, k: F.relu(F.conv2d(x, k, padding=1)).sum(), [x, k], name="conv relu")
    assert result.passed
    assert result.max_rel_error < TOLERANCE


def test_split_attention_block(double, rng):
    cfg = SplatConfig(in_channels=8, out_channels=8, cardinality=2, radix=2)
    block = init_splat_block(rng, cfg)
    perturb_parameters(block, rng)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    probe = rng.normal(size=(2, 8, 4, 4))
    params = [t for _, t in block.named_parameters()]
    result = check_gradients(lambda *_: F.weighted_sum(split_attention_forward(x, block, cfg), probe),
                             [x] + params, max_coords=16, name="splat")
    assert result.passed, result.describe()


def test_wrong_gradient_is_reported(double, rng):
    x = Tensor(rng.normal(size=(4,)))

    def doubled_backward(x):
        # numerically x*x but the recorded op is x*c with c detached
        c = Tensor(x.data.copy())
        return (x * c).sum()

    result = check_gradients(doubled_backward, [x], name="broken")
    assert not result.passed
    assert result.worst is not None


def test_single_precision_inputs_are_rejected(rng):
    x = Tensor(rng.normal(size=(2, 2)).astype(np.float32))
    with pytest.raises(PolypNetError):
        check_gradients(lambda x: x.sum(), [x])


def test_unknown_suite():
    with pytest.raises(PolypNetError):
        run_suite("everything")


def test_ops_suite_passes():
    report = run_suite("ops", seed=0)
    assert report.results
    assert report.passed, [r.describe() for r in report.failures()]


def test_blocks_suite_passes():
    report = run_suite("blocks", seed=0)
    assert {"attention gate", "coupled loss"} <= {r.name for r in report.results}
    assert report.passed, [r.describe() for r in report.failures()]


@pytest.mark.slow
def test_full_network_suite_passes():
    report = run_suite("full", seed=0)
    assert report.passed, [r.describe() for r in report.failures()]
