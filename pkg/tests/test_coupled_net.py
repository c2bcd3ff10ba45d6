from dataclasses import replace

import numpy as np
import pytest

from polypnet.coupled_net import (
    VARIANTS,
    CoupledNetConfig,
    bridge_combine,
    coupled_forward,
    decoder_block,
    init_coupled_net,
    init_decoder_block,
    unet1_forward,
)
from polypnet.errors import ConfigError, ShapeError
from polypnet.losses import coupled_loss
from polypnet.tensor import OpGraph, Tensor, backward


def forward(cfg, seed=0, batch=2, training=True):
    params = init_coupled_net(cfg, np.random.default_rng(seed))
    image = Tensor(np.random.default_rng(99).random((batch, 3, cfg.input_side, cfg.input_side)))
    return params, image, coupled_forward(image, params, cfg, training=training)


def test_output_shapes(toy_config):
    _, _, out = forward(toy_config)
    assert out.p1.shape == out.p2.shape == (2, 1, 32, 32)
    for p in (out.p1, out.p2):
        assert np.all((p.data > 0) & (p.data < 1))
    assert out.attention_map.shape == (2, 1, 32, 32)
    assert len(out.unet2.attention_maps) == 5


def test_single_unet_gives_identical_heads(toy_config):
    cfg = toy_config.with_variant("attention-unet")
    params, _, out = forward(cfg)
    assert out.p2 is out.p1
    assert params.unet2 is None and params.cross is None


def test_unet_variant_has_no_attention_map(toy_config):
    _, _, out = forward(toy_config.with_variant("unet"))
    assert out.attention_map is None


def test_gates_change_the_output(toy_config):
    gated = forward(toy_config)[2].p2.data
    ungated = forward(toy_config.with_variant("cunet"))[2].p2.data
    assert not np.allclose(gated, ungated)


def test_variant_parameter_ordering(toy_config):
    counts = {name: init_coupled_net(toy_config.with_variant(name), np.random.default_rng(0)).num_parameters()
              for name in VARIANTS}
    assert counts["unet"] < counts["attention-unet"]
    assert counts["unet"] < counts["cunet"] < counts["ag-cunet"]


@pytest.mark.parametrize("overrides", [
    {},
    {"bridge_mode": "concat"},
    {"bridge_source": "logits"},
    {"enable_cross_connections": False},
])
def test_every_parameter_receives_a_gradient(double, toy_config, overrides):
    cfg = replace(toy_config, **overrides)
    params = init_coupled_net(cfg, np.random.default_rng(0))
    for t in params.parameters():
        t.requires_grad = True
    image = Tensor(np.random.default_rng(1).random((2, 3, 32, 32)))
    target = (np.random.default_rng(2).random((2, 1, 32, 32)) > 0.7).astype(float)
    with OpGraph() as graph:
        out = coupled_forward(image, params, cfg)
        loss = coupled_loss(out.p1, out.p2, target)
    backward(graph, loss)
    dead = [name for name, t in params.named_parameters() if t.grad is None]
    assert dead == []
    assert all(np.all(np.isfinite(t.grad)) for t in params.parameters())


def test_parameter_partition(toy_config):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    first = dict(params.unet1_parameters())
    rest = dict(params.non_unet1_parameters())
    assert not set(first) & set(rest)
    assert len(first) + len(rest) == len(list(params.named_parameters()))
    assert any(name.startswith("cross.") for name in rest)


def test_unet1_forward_matches_coupled_p1(toy_config):
    params, image, out = forward(toy_config, training=False)
    p1 = unet1_forward(image, params, toy_config, training=False).probability
    assert np.array_equal(p1.data, out.p1.data)


def test_eval_mode_single_image(toy_config):
    _, _, out = forward(toy_config, batch=1, training=False)
    assert out.p2.shape == (1, 1, 32, 32)


def test_bridge_multiply_is_exact(double, rng):
    image = rng.random((2, 3, 4, 4))
    f1 = rng.random((2, 1, 4, 4))
    out = bridge_combine(Tensor(image), Tensor(f1))
    assert np.array_equal(out.data, image * f1)
    with pytest.raises(ShapeError):
        bridge_combine(Tensor(image), Tensor(rng.random((2, 2, 4, 4))))
    with pytest.raises(ConfigError):
        bridge_combine(Tensor(image), Tensor(f1), mode="concat")


def test_decoder_block_shapes(rng):
    block = init_decoder_block(rng, 6 + 3, 4)
    out = decoder_block(Tensor(rng.random((2, 6, 4, 4))), [Tensor(rng.random((2, 3, 8, 8)))], block)
    assert out.shape == (2, 4, 8, 8)
    with pytest.raises(ShapeError):
        decoder_block(Tensor(rng.random((2, 6, 4, 4))), [Tensor(rng.random((2, 3, 6, 6)))], block)


def test_input_side_checks(toy_config):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        coupled_forward(Tensor(np.zeros((1, 3, 40, 40))), params, toy_config)
    with pytest.raises(ConfigError):
        CoupledNetConfig(input_side=48)
    with pytest.raises(ConfigError):
        toy_config.with_variant("double-unet")


def test_resnet_backbone_network(rng):
    cfg = CoupledNetConfig.toy(width=4, input_side=32, backbone="resnet")
    _, _, out = forward(cfg)
    assert out.p2.shape == (2, 1, 32, 32)


def test_saturated_head_stays_inside_unit_interval(toy_config):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    params.unet2.head.bias.data = np.full_like(params.unet2.head.bias.data, 20.0)
    params.unet1.head.bias.data = np.full_like(params.unet1.head.bias.data, -120.0)
    image = Tensor(np.random.default_rng(1).random((1, 3, 32, 32)))
    out = coupled_forward(image, params, toy_config, training=False)
    assert out.p2.data.dtype == np.float32
    for p in (out.p1, out.p2):
        assert np.all((p.data > 0) & (p.data < 1))


def test_cross_connections_change_p2_only(toy_config):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    image = Tensor(np.random.default_rng(1).random((2, 3, 32, 32)))
    with_cross = coupled_forward(image, params, toy_config, training=False)
    without_cross = coupled_forward(image, params, replace(toy_config, enable_cross_connections=False), training=False)
    assert np.array_equal(with_cross.p1.data, without_cross.p1.data)
    assert not np.array_equal(with_cross.p2.data, without_cross.p2.data)


def test_unet1_forward_is_repeatable(toy_config):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    image = Tensor(np.random.default_rng(1).random((2, 3, 32, 32)))
    first = unet1_forward(image, params, toy_config, training=False).probability
    second = unet1_forward(image, params, toy_config, training=False).probability
    assert np.array_equal(first.data, second.data)


def test_decoder_block_without_skips(double, rng):
    block = init_decoder_block(rng, 6, 4)
    for t in block.parameters():
        t.requires_grad = True
    d = Tensor(rng.random((2, 6, 4, 4)), requires_grad=True)
    with OpGraph() as graph:
        out = decoder_block(d, [], block)
        loss = out.sum()
    assert out.shape == (2, 4, 8, 8)
    backward(graph, loss)
    assert d.grad is not None and d.grad.shape == d.shape
    assert all(t.grad is not None and np.all(np.isfinite(t.grad)) for t in block.parameters())


def test_frozen_first_unet_keeps_running_stats(toy_config):
    params = init_coupled_net(toy_config, np.random.default_rng(0))
    before = {name: a.copy() for name, a in params.named_buffers()}
    image = Tensor(np.random.default_rng(1).random((2, 3, 32, 32)))
    coupled_forward(image, params, toy_config, training=True, unet1_training=False)
    after = dict(params.named_buffers())
    for name, values in before.items():
        if name.startswith("unet1."):
            np.testing.assert_array_equal(after[name], values, err_msg=name)
    assert any(not np.array_equal(after[name], values) for name, values in before.items() if name.startswith("unet2."))
