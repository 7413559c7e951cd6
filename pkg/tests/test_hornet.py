import numpy as np
import pytest

from horncore import tensor as T
from horncore.hornet import (PRESETS, BlockSpec, HorFPNSpec, ModelSpec, build_block, build_horfpn,
                             build_isotropic, build_model, forward_classify, get_preset, horfpn_fuse)
from horncore.interaction import polynomial_degree
from horncore.tensor import Tensor

from conftest import central_diff


def test_tiny_preset_shape():
    spec = get_preset("hornet-t-7x7")
    assert spec.stage_widths() == [64, 128, 256, 512]
    assert spec.depths == (2, 3, 18, 2) and spec.orders == (2, 3, 4, 5)
    assert spec.stage_resolutions(224) == [56, 28, 14, 7]
    assert [get_preset(f"hornet-{s}-7x7").width for s in "tsbl"] == [64, 96, 128, 192]


def test_coarsest_order_width_constant_across_stages():
    spec = get_preset("hornet-b-7x7")
    assert {bs.gnconv_config().dims[0] for bs in spec.block_specs()} == {128 // 2}


def test_gf_presets_use_global_filters_in_late_stages():
    spec = get_preset("hornet-t-gf")
    assert spec.mixers == ("dwconv7", "dwconv7", "mixed_gf", "mixed_gf")
    assert spec.block_specs()[2].spatial_size == (14, 14)


def test_isotropic_preset():
    spec = get_preset("hornet-s-iso-7x7")
    assert spec.depths == (13,) and spec.width == 384 and spec.stage_resolutions(224) == [14]


def test_unknown_preset():
    with pytest.raises(ValueError):
        get_preset("hornet-xl")


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(depths=(1, 1), orders=(2,), mixers=("dwconv7",))
    with pytest.raises(ValueError):
        ModelSpec(image_size=100)
    with pytest.raises(ValueError):
        ModelSpec(width=6, orders=(4, 4, 4, 4))


def test_spec_dict_roundtrip():
    for spec in PRESETS.values():
        assert ModelSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        ModelSpec.from_dict({"widht": 3})


def test_micro_forward_shapes(rng):
    model = build_model(get_preset("micro"), seed=0)
    x = rng.standard_normal((2, 3, 64, 64)).astype(np.float32)
    logits = forward_classify(model, x)
    assert logits.shape == (2, 10) and logits.dtype == np.float32
    feats, inputs = model.features(Tensor(x), return_block_inputs=True)
    assert feats.shape == (2, 128, 2, 2) and len(inputs) == len(model.blocks) == 5


def test_input_validation(rng):
    model = build_model(get_preset("micro-iso"))
    with pytest.raises(ValueError):
        model(rng.standard_normal((1, 1, 32, 32)))
    with pytest.raises(ValueError):
        model(rng.standard_normal((1, 3, 30, 30)))
    gf = build_model(get_preset("hornet-t-gf").replace(width=8, depths=(1, 1, 1, 1), image_size=64))
    with pytest.raises(ValueError):
        gf(rng.standard_normal((1, 3, 32, 32)))


def test_layerscale_near_zero_makes_block_near_identity(rng):
    block = build_block(BlockSpec(8, 2, "dwconv3", layerscale_init=1e-6), seed=0)
    x = rng.standard_normal((1, 8, 5, 5))
    y = block(Tensor(x)).data
    assert np.max(np.abs(y - x)) < 1e-4
    block1 = build_block(BlockSpec(8, 2, "dwconv3", layerscale_init=1.0), seed=0)
    assert np.max(np.abs(block1(Tensor(x)).data - x)) > 1e-2


def test_block_parameter_names():
    block = build_block(BlockSpec(8, 2, "dwconv3"), prefix="b")
    names = block.store.names()
    assert names[:3] == ["b.norm1.weight", "b.norm1.bias", "b.gnconv.phi_in.weight"]
    assert "b.gamma1" in names and "b.fc2.weight" in names and "b.gamma2" in names


@pytest.mark.parametrize("n", [1, 2, 3])
def test_plain_isotropic_model_degree(n, rng):
    """Without norms, FFN and biases, one block is a degree-(n+1) polynomial of the image."""
    model = build_isotropic(8, 1, n, "dwconv3", patch=2, image_size=8, num_classes=3,
                            dtype=np.float64, use_norm=False, use_ffn=False, bias=False,
                            layerscale_init=1.0)
    f = lambda x: model(Tensor(x)).data
    x = rng.standard_normal((1, 3, 8, 8))
    assert polynomial_degree(f, x, rng.standard_normal(x.shape)) == n + 1


def test_micro_model_gradients(rng):
    spec = get_preset("micro").replace(width=8, depths=(1, 1, 1, 1), image_size=32,
                                       layerscale_init=0.5)
    model = build_model(spec, seed=1, dtype=np.float64)
    x = rng.standard_normal((2, 3, 32, 32))
    y = np.array([1, 4])
    loss = lambda: T.softmax_cross_entropy(model(Tensor(x)), y)
    params = list(model.store)
    grads = T.grad(loss(), params)
    worst = 0.0
    for p, g in zip(params[::5], grads[::5]):
        num = central_diff(lambda: float(loss().data), p.data, h=1e-5,
                           indices=range(0, p.size, max(1, p.size // 4)))
        for i, v in num.items():
            worst = max(worst, abs(g.reshape(-1)[i] - v) / max(abs(v), abs(g.reshape(-1)[i]), 1e-6))
    assert worst < 1e-4


def test_seed_determinism():
    a = build_model(get_preset("micro-iso"), seed=3).store.state_dict()
    b = build_model(get_preset("micro-iso"), seed=3).store.state_dict()
    c = build_model(get_preset("micro-iso"), seed=4).store.state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_horfpn_fusion_shapes(rng):
    fpn = build_horfpn(HorFPNSpec(3, 8, order=3, mixer_kind="dwconv3"), seed=0)
    feats = [Tensor(rng.standard_normal((1, 8, s, s))) for s in (16, 8, 4)]
    outs = horfpn_fuse(feats, fpn)
    assert [o.shape for o in outs] == [(1, 8, 16, 16), (1, 8, 8, 8), (1, 8, 4, 4)]


def test_horfpn_top_down_flow(rng):
    """Changing only the coarsest level changes every fused output."""
    fpn = build_horfpn(HorFPNSpec(2, 4, order=2, mixer_kind="dwconv3"), seed=0)
    fine = Tensor(rng.standard_normal((1, 4, 8, 8)))
    a = horfpn_fuse([fine, Tensor(rng.standard_normal((1, 4, 4, 4)))], fpn)
    b = horfpn_fuse([fine, Tensor(rng.standard_normal((1, 4, 4, 4)))], fpn)
    assert np.max(np.abs(a[0].data - b[0].data)) > 1e-6


def test_horfpn_errors(rng):
    fpn = build_horfpn(HorFPNSpec(2, 4, order=2, mixer_kind="dwconv3"))
    with pytest.raises(ValueError):
        horfpn_fuse([Tensor(rng.standard_normal((1, 4, 8, 8)))], fpn)
    with pytest.raises(ValueError):
        horfpn_fuse([Tensor(rng.standard_normal((1, 4, 8, 8))), Tensor(rng.standard_normal((1, 4, 3, 3)))], fpn)
    with pytest.raises(ValueError):
        horfpn_fuse([Tensor(rng.standard_normal((1, 5, 8, 8))), Tensor(rng.standard_normal((1, 5, 4, 4)))], fpn)
