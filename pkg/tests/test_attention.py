import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uacanet import autodiff as ad
from uacanet.attention import PAA, AxialAttention, PAADecoder, PAAEncoder
from uacanet.autodiff import Tensor
from uacanet.oracles import axial_attention_loop
from uacanet.selftest import _probe, _randomize_biases


def f64(build):
    with ad.precision(np.float64):
        return build()


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape), dtype=np.float64)


def test_reduction_must_divide_channels():
    with pytest.raises(ValueError, match="divisible"):
        AxialAttention(12, "horizontal", reduction=8)
    with pytest.raises(ValueError):
        AxialAttention(8, "diagonal")


def test_vertical_attention_on_single_row_is_value_projection():
    rng = np.random.default_rng(0)
    attn = f64(lambda: AxialAttention(8, "vertical", reduction=4, rng=rng))
    _randomize_biases(attn, rng)
    x = rand(rng, 1, 8, 1, 5)
    expected = ad.add(x, attn.out_proj(attn.value(x)))
    np.testing.assert_allclose(attn(x).data, expected.data, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("axis", ["horizontal", "vertical"])
def test_constant_input_gives_constant_output(axis):
    rng = np.random.default_rng(1)
    attn = f64(lambda: AxialAttention(8, axis, reduction=4, rng=rng))
    _randomize_biases(attn, rng)
    x = Tensor(np.broadcast_to(rng.normal(size=(1, 8, 1, 1)), (1, 8, 4, 6)).copy())
    out = attn(x).data
    np.testing.assert_allclose(out, np.broadcast_to(out[:, :, :1, :1], out.shape), rtol=1e-12)


def test_paa_on_single_pixel_doubles_branch():
    rng = np.random.default_rng(2)
    paa = f64(lambda: PAA(8, reduction=4, rng=rng))
    paa.vertical.load_state_dict(paa.horizontal.state_dict())
    x = rand(rng, 2, 8, 1, 1)
    np.testing.assert_allclose(paa(x).data, 2 * paa.horizontal(x).data, rtol=1e-14)


def test_paa_is_order_independent():
    rng = np.random.default_rng(3)
    paa = f64(lambda: PAA(8, reduction=4, rng=rng))
    x = rand(rng, 1, 8, 3, 5)
    swapped = ad.add(paa.vertical(x), paa.horizontal(x))
    np.testing.assert_array_equal(paa(x).data, swapped.data)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), h=st.integers(1, 8), w=st.integers(1, 8),
       axis=st.sampled_from(["horizontal", "vertical"]))
def test_axial_matches_loop_oracle(seed, h, w, axis):
    rng = np.random.default_rng(seed)
    attn = f64(lambda: AxialAttention(8, axis, reduction=4, rng=rng))
    _randomize_biases(attn, rng)
    x = rng.normal(size=(1, 8, h, w))
    ref = axial_attention_loop(x, attn)
    got = attn(Tensor(x)).data
    assert np.max(np.abs(got - ref)) <= 1e-5 * np.max(np.abs(ref))


@pytest.mark.parametrize("axis", ["horizontal", "vertical"])
def test_affinity_rows_sum_to_one(axis):
    rng = np.random.default_rng(4)
    attn = f64(lambda: AxialAttention(8, axis, reduction=2, rng=rng))
    a = attn.affinity(rand(rng, 2, 8, 5, 3))
    np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- encoder
def test_encoder_shape_and_channel_check():
    rng = np.random.default_rng(5)
    enc = PAAEncoder(6, 16, rng)
    assert enc(Tensor(rng.normal(size=(2, 6, 8, 8)))).shape == (2, 16, 8, 8)
    with pytest.raises(ValueError):
        enc(Tensor(rng.normal(size=(2, 5, 8, 8))))


def test_encoder_zero_in_zero_out():
    enc = PAAEncoder(6, 16, np.random.default_rng(6))
    np.testing.assert_array_equal(enc(Tensor(np.zeros((1, 6, 8, 8)))).data, 0.0)


@pytest.mark.parametrize("use_paa", [True, False])
def test_every_encoder_branch_gets_gradient(use_paa):
    rng = np.random.default_rng(7)
    enc = f64(lambda: PAAEncoder(4, 8, rng, use_paa=use_paa, reduction=4))
    _randomize_biases(enc, rng)
    _probe(enc)(rand(rng, 2, 4, 8, 8)).backward()
    for name, p in enc.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


# ---------------------------------------------------------------- decoder
def test_decoder_shapes_and_scale_check():
    rng = np.random.default_rng(8)
    dec = PAADecoder(8, rng)
    feat, logit = dec(rand(rng, 2, 8, 8, 8), rand(rng, 2, 8, 4, 4), rand(rng, 2, 8, 2, 2))
    assert feat.shape == (2, 8, 8, 8) and logit.shape == (2, 1, 8, 8)
    with pytest.raises(ValueError, match="scale"):
        dec(rand(rng, 1, 8, 8, 8), rand(rng, 1, 8, 8, 8), rand(rng, 1, 8, 2, 2))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), side=st.sampled_from([4, 8, 12]))
def test_decoder_constant_inputs_give_constant_logit(seed, side):
    rng = np.random.default_rng(seed)
    dec = f64(lambda: PAADecoder(8, rng, reduction=4))
    _randomize_biases(dec, rng)
    c = rng.normal(size=(1, 8, 1, 1))

    def const(s):
        return Tensor(np.broadcast_to(c, (1, 8, s, s)).copy())

    _, logit = dec(const(side), const(side // 2), const(side // 4))
    np.testing.assert_allclose(logit.data, logit.data[0, 0, 0, 0], rtol=1e-10, atol=1e-12)
