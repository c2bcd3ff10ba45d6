import numpy as np
import pytest

from polypnet.errors import ConfigError, ShapeError
from polypnet.layers import perturb_parameters
from polypnet.splat import (
    SplatConfig,
    block_output_shape,
    init_splat_block,
    split_attention_forward,
    split_attention_weights,
)
from polypnet.tensor import Tensor


def random_block(rng, channels, cardinality, radix, in_channels=None, stride=1):
    cfg = SplatConfig(in_channels=in_channels or channels, out_channels=channels,
                      cardinality=cardinality, radix=radix, stride=stride)
    params = init_splat_block(rng, cfg)
    perturb_parameters(params, rng, scale=0.5)
    return cfg, params


def loop_oracle(splits, params, cfg):
    """Reimplementation of the split-attention fusion with explicit loops"""
    batch = splits[0].shape[0]
    w, radix = cfg.group_width, cfg.radix
    fused = np.zeros((batch, cfg.out_channels) + splits[0].shape[2:])
    for b in range(batch):
        for k in range(cfg.cardinality):
            mlp = params.attention[k]
            group = [splits[k * radix + r][b] for r in range(radix)]
            s = np.array([sum(g[c] for g in group).mean() for c in range(w)])
            hidden = np.maximum(mlp.fc1_weight.data @ s + mlp.fc1_bias.data, 0.0)
            logits = (mlp.fc2_weight.data @ hidden + mlp.fc2_bias.data).reshape(radix, w)
            for c in range(w):
                if radix > 1:
                    e = np.exp(logits[:, c] - logits[:, c].max())
                    a = e / e.sum()
                else:
                    a = 1.0 / (1.0 + np.exp(-logits[:, c]))
                fused[b, k * w + c] = sum(a[r] * group[r][c] for r in range(radix))
    return fused


def test_attention_weights_sum_to_one(double, rng):
    for _ in range(1000):
        radix = int(rng.integers(2, 5))
        channels = int(rng.integers(1, 5)) * 2
        cfg, params = random_block(rng, channels, 2, radix)
        x = Tensor(rng.normal(scale=3.0, size=(2, channels, 4, 4)))
        _, trace = split_attention_forward(x, params, cfg, trace=True)
        assert trace.attention.shape == (2, 2, radix, cfg.group_width)
        assert np.allclose(trace.attention.sum(axis=2), 1.0, atol=1e-6)


def test_radix_one_uses_sigmoid(double, rng):
    cfg, params = random_block(rng, 8, 2, 1)
    _, trace = split_attention_forward(Tensor(rng.normal(size=(2, 8, 4, 4))), params, cfg, trace=True)
    assert np.all((trace.attention > 0) & (trace.attention < 1))


def test_zero_mlp_gives_uniform_weights(double, rng):
    cfg = SplatConfig(in_channels=6, out_channels=6, cardinality=1, radix=3)
    params = init_splat_block(rng, cfg)
    mlp = params.attention[0]
    for t in (mlp.fc2_weight, mlp.fc2_bias):
        t.data = np.zeros_like(t.data)
    s = Tensor(rng.normal(size=(2, 6)))
    weights = split_attention_weights(s, mlp, radix=3).data
    assert np.allclose(weights, 1.0 / 3.0)


def test_zero_mlp_radix_one_gives_half(double, rng):
    cfg = SplatConfig(in_channels=4, out_channels=4, cardinality=2, radix=1)
    params = init_splat_block(rng, cfg)
    mlp = params.attention[0]
    for t in (mlp.fc2_weight, mlp.fc2_bias):
        t.data = np.zeros_like(t.data)
    assert np.allclose(split_attention_weights(Tensor(np.ones((1, 2))), mlp, radix=1).data, 0.5)


def test_matches_loop_oracle(double, rng):
    for _ in range(100):
        cardinality = int(rng.integers(1, 5))
        radix = int(rng.integers(1, 5))
        channels = cardinality * int(rng.integers(1, 16 // cardinality + 1))
        cfg, params = random_block(rng, channels, cardinality, radix)
        x = Tensor(rng.normal(size=(2, channels, 3, 3)))
        _, trace = split_attention_forward(x, params, cfg, trace=True)
        assert np.allclose(trace.fused, loop_oracle(trace.splits, params, cfg), atol=1e-9)


def test_fusion_is_convex_combination(double, rng):
    cfg, params = random_block(rng, 8, 2, 3)
    _, trace = split_attention_forward(Tensor(rng.normal(size=(2, 8, 4, 4))), params, cfg, trace=True)
    w = cfg.group_width
    for k in range(cfg.cardinality):
        group = np.stack(trace.splits[k * 3:(k + 1) * 3])
        fused = trace.fused[:, k * w:(k + 1) * w]
        assert np.all(fused >= group.min(axis=0) - 1e-12)
        assert np.all(fused <= group.max(axis=0) + 1e-12)


def test_fresh_block_is_identity(double, rng):
    cfg = SplatConfig(in_channels=8, out_channels=8, cardinality=2, radix=2)
    params = init_splat_block(rng, cfg)
    x = rng.normal(size=(2, 8, 4, 4))
    assert np.array_equal(split_attention_forward(Tensor(x), params, cfg).data, x)


def test_stride_two_with_projection(rng):
    cfg, params = random_block(rng, 8, 2, 2, in_channels=4, stride=2)
    assert params.shortcut is not None
    y = split_attention_forward(Tensor(rng.normal(size=(2, 4, 8, 8))), params, cfg)
    assert y.shape == (2,) + block_output_shape(cfg, 8, 8) == (2, 8, 4, 4)


def test_eval_mode_runs_on_single_image(rng):
    cfg, params = random_block(rng, 8, 2, 2)
    y = split_attention_forward(Tensor(rng.normal(size=(1, 8, 1, 1))), params, cfg, training=False)
    assert y.shape == (1, 8, 1, 1)
    assert np.all(np.isfinite(y.data))


def test_config_validation():
    with pytest.raises(ConfigError):
        SplatConfig(in_channels=8, out_channels=6, cardinality=4)
    with pytest.raises(ConfigError):
        SplatConfig(in_channels=8, out_channels=8, stride=3)
    with pytest.raises(ConfigError):
        SplatConfig(in_channels=8, out_channels=8, radix=0)


def test_channel_mismatch(rng):
    cfg, params = random_block(rng, 8, 2, 2)
    with pytest.raises(ShapeError):
        split_attention_forward(Tensor(np.zeros((1, 4, 4, 4))), params, cfg)
