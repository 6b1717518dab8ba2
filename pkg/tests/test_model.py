import numpy as np
import pytest

from uacanet import autodiff as ad
from uacanet.autodiff import Tensor
from uacanet.losses import total_loss
from uacanet.model import BackboneLite, ModelConfig, UACANet
from uacanet.selftest import _randomize_biases, model_gradient_errors


def image(side, b=1, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(size=(b, 3, side, side)).astype(np.float32))


@pytest.mark.parametrize("side,sizes", [(352, (88, 44, 22)), (64, (16, 8, 4))])
def test_backbone_strides(side, sizes):
    bb = BackboneLite((8, 8, 16, 16))
    with ad.no_grad():
        feats = bb(image(side))
    assert tuple(f.shape[-1] for f in feats) == sizes
    assert tuple(f.shape[1] for f in feats) == (8, 16, 16)


def test_backbone_rejects_bad_side():
    with pytest.raises(ValueError):
        BackboneLite()(image(48))
    with pytest.raises(ValueError):
        ModelConfig(side=100)


def test_forward_is_deterministic():
    m = UACANet(ModelConfig(width=8, side=64, backbone_widths=(8, 8, 8, 8)))
    x = image(64, b=2)
    with ad.no_grad():
        a = [o.data for o in m(x)]
        b = [o.data for o in m(x)]
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


@pytest.mark.parametrize("width,side", [(32, 64), (32, 352), (256, 64), (256, 352)])
def test_output_shapes(width, side):
    m = UACANet(ModelConfig(width=width, side=side))
    with ad.no_grad():
        outs = m(image(side))
    assert [o.shape for o in outs] == [(1, 1, side, side)] * 4


@pytest.mark.parametrize("flag", ["disable_paa", "disable_uncertainty"])
def test_ablation_flags_keep_shapes_and_change_params(flag):
    base = UACANet(ModelConfig(width=16, side=64))
    abl = UACANet(ModelConfig(width=16, side=64, **{flag: True}))
    with ad.no_grad():
        outs = abl(image(64, b=2))
    assert [o.shape for o in outs] == [(2, 1, 64, 64)] * 4
    if flag == "disable_paa":
        assert abl.num_parameters() < base.num_parameters()
    else:
        assert len(abl.area_maps()[0].as_list()) == 2


def test_zero_init_heads_give_residual_identity_chain():
    m = UACANet(ModelConfig(width=16, side=64, zero_init_heads=True))
    with ad.no_grad():
        logits = m.forward_stages(image(64))["logits"]
    for prev, u in zip(logits[:-1], logits[1:]):
        h, w = u.shape[-2:]
        assert np.array_equal(u.data, ad.bilinear_resize(prev, h, w).data)


def test_every_parameter_gets_gradient():
    m = UACANet(ModelConfig(width=8, side=64, backbone_widths=(8, 8, 8, 8)))
    rng = np.random.default_rng(0)
    _randomize_biases(m, rng)
    gt = Tensor((rng.uniform(size=(2, 1, 64, 64)) > 0.5).astype(np.float32))
    total_loss(m(image(64, b=2)), gt).backward()
    missing = [n for n, p in m.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert not missing


def test_end_to_end_gradient_check():
    errs = model_gradient_errors(seed=1)
    assert len(errs) == 20
    assert max(e for _, _, e in errs) < 1e-3


def test_config_roundtrip_and_unknown_keys():
    cfg = ModelConfig(width=16, side=64, disable_paa=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(KeyError):
        ModelConfig.from_dict({"width": 8, "colour": "red"})
