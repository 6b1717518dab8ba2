import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uacanet import autodiff as ad
from uacanet import oracles
from uacanet.autodiff import Tensor
from uacanet.data import read_pnm
from uacanet.selftest import (
    BLOCK_GRAD_STEP,
    _probe,
    check_area_identities,
    module_gradient_cases,
    random_uaca,
    rel_err,
)
from uacanet.uaca import UACA, AreaMaps, ContextVectors, area_maps, context_vectors, save_debug_maps


def m64(values):
    return Tensor(np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1))


@pytest.mark.parametrize("m,expected", [
    (0.5, (0.0, 0.0, 0.5)),
    (1.0, (0.5, 0.0, 0.0)),
    (0.0, (0.0, 0.5, 0.0)),
    (0.8, (0.3, 0.0, 0.2)),
])
def test_area_map_examples(m, expected):
    a = area_maps(m64([m]))
    got = [float(t.data.ravel()[0]) for t in a.as_list()]
    np.testing.assert_allclose(got, expected, atol=1e-15)
    assert oracles.area_maps_scalar(m) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=64))
def test_area_map_identities_property(ms):
    a = area_maps(m64(ms))
    fg, bg, unc = a.fg.data, a.bg.data, a.uncertain.data
    m = np.asarray(ms).reshape(fg.shape)
    assert np.all(np.abs(fg + bg + unc - 0.5) <= 1e-6)
    assert np.all(fg * bg == 0)
    assert np.all(np.abs(0.5 + fg - bg - m) <= 1e-6)
    assert min(fg.min(), bg.min(), unc.min()) >= 0


def test_area_identity_suite_passes_and_catches_mutation():
    ok, _ = check_area_identities()
    assert ok

    def corrupted(m, uncertainty=True):
        # threshold moved from 0.5 to 0.4
        fg = ad.scalar_max(ad.sub(m, 0.4), 0.0)
        bg = ad.scalar_max(ad.add(ad.neg(m), 0.4), 0.0)
        unc = ad.add(ad.neg(ad.abs(ad.sub(m, 0.4))), 0.5)
        return AreaMaps(fg, bg, unc)

    ok, detail = check_area_identities(area_fn=corrupted)
    assert not ok and "sum=" in detail


def test_ablation_drops_uncertain_area():
    a = area_maps(m64([0.3, 0.9]), uncertainty=False)
    assert a.uncertain is None and len(a.as_list()) == 2


# ---------------------------------------------------------------- context vectors
def test_zero_area_gives_zero_vector():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 2, 2)))
    zero = Tensor(np.zeros((1, 1, 2, 2)))
    v = context_vectors(x, AreaMaps(zero, zero, zero))
    np.testing.assert_array_equal(v.stacked.data, 0.0)


def test_constant_features_scale_with_area_mass():
    c0 = np.array([1.5, -2.0, 0.25])
    x = Tensor(np.broadcast_to(c0[None, :, None, None], (1, 3, 4, 4)).copy())
    m_u = np.random.default_rng(1).uniform(0, 0.5, size=(1, 1, 4, 4))
    zero = Tensor(np.zeros_like(m_u))
    v = context_vectors(x, AreaMaps(zero, zero, Tensor(m_u)))
    np.testing.assert_allclose(v.vector(2).data[0, :, 0], c0 * m_u.sum(), rtol=1e-12)


def test_context_vectors_reject_spatial_mismatch():
    with pytest.raises(ValueError):
        context_vectors(Tensor(np.zeros((1, 2, 4, 4))), area_maps(Tensor(np.zeros((1, 1, 3, 4)))))


# ---------------------------------------------------------------- scores and aggregation
def test_equal_vectors_give_uniform_scores():
    rng = np.random.default_rng(2)
    mod = random_uaca(rng)
    v = ContextVectors(Tensor(np.repeat(rng.normal(size=(1, 4, 1)), 3, axis=2)))
    for s in mod.similarity_scores(Tensor(rng.normal(size=(1, 4, 3, 5))), v):
        np.testing.assert_allclose(s.data, 1 / 3, rtol=1e-12)


def test_two_area_scores_partition():
    rng = np.random.default_rng(3)
    mod = random_uaca(rng, uncertainty=False)
    x = Tensor(rng.normal(size=(2, 4, 3, 3)))
    v = context_vectors(x, area_maps(Tensor(rng.uniform(size=(2, 1, 3, 3))), uncertainty=False))
    s = mod.similarity_scores(x, v)
    assert len(s) == 2
    np.testing.assert_allclose(s[0].data + s[1].data, 1.0, atol=1e-12)


def test_aggregate_degenerate_weights():
    rng = np.random.default_rng(4)
    mod = random_uaca(rng)
    v = ContextVectors(Tensor(rng.normal(size=(1, 4, 3))))
    one, zero = Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 2)))
    t = mod.context_aggregate([one, zero, zero], v).data
    ref = oracles._pointwise(mod.delta, oracles._pointwise(mod.omega, v.stacked.data[0, :, 0]))
    np.testing.assert_allclose(t[0, :, 1, 1], ref, rtol=1e-12)


def test_aggregate_equal_vectors_ignores_scores():
    rng = np.random.default_rng(5)
    mod = random_uaca(rng)
    vec = rng.normal(size=(1, 4, 1))
    v = ContextVectors(Tensor(np.repeat(vec, 3, axis=2)))
    raw = [Tensor(rng.normal(size=(1, 1, 3, 3))) for _ in range(3)]
    t = mod.context_aggregate(ad.softmax_over(raw), v).data
    ref = oracles._pointwise(mod.delta, oracles._pointwise(mod.omega, vec[0, :, 0]))
    np.testing.assert_allclose(t, np.broadcast_to(ref[None, :, None, None], t.shape), rtol=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.integers(1, 8), h=st.integers(1, 8), w=st.integers(1, 8))
def test_uaca_matches_composed_loop_oracles(seed, c, h, w):
    rng = np.random.default_rng(seed)
    mod = random_uaca(rng, cin=c, width=4)
    x = Tensor(rng.normal(size=(1, c, h, w)))
    areas = area_maps(Tensor(rng.uniform(size=(1, 1, h, w))))
    v = context_vectors(x, areas)
    ref_v = oracles.context_vectors_loop(x.data, [a.data for a in areas.as_list()])
    s = mod.similarity_scores(x, v)
    ref_s = oracles.similarity_loop(x.data, ref_v, mod.psi, mod.phi)
    t = mod.context_aggregate(s, v)
    ref_t = oracles.aggregate_loop(ref_s, ref_v, mod.omega, mod.delta)
    assert rel_err(v.stacked.data, ref_v) <= 1e-5
    assert rel_err(np.concatenate([a.data for a in s], 1), ref_s) <= 1e-5
    assert rel_err(t.data, ref_t) <= 1e-5


# ---------------------------------------------------------------- full module
def test_forward_shapes_and_zero_head_identity():
    rng = np.random.default_rng(6)
    with ad.precision(np.float64):
        mod = UACA(4, 8, rng, zero_init_head=True)
    guide = Tensor(rng.normal(size=(2, 1, 3, 3)))
    feat, logit = mod(Tensor(rng.normal(size=(2, 4, 6, 6))), guide)
    assert feat.shape == (2, 8, 6, 6) and logit.shape == (2, 1, 6, 6)
    np.testing.assert_array_equal(logit.data, ad.bilinear_resize(guide, 6, 6).data)


@pytest.mark.parametrize("seed", range(20))
def test_uaca_blocks_pass_grad_check(seed):
    rng = np.random.default_rng(seed)
    for name, fn, x in module_gradient_cases(rng):
        f = fn if name in ("bce_loss", "iou_loss") else _probe(fn, seed)
        err = ad.grad_check(f, Tensor(x.data.astype(np.float64)), h=BLOCK_GRAD_STEP)
        assert err < 1e-4, f"{name}: {err:.2e}"


def test_debug_maps_written_scaled(tmp_path):
    m = ad.sigmoid(Tensor(np.array([[[[0.0, 2.0], [-2.0, 0.5]]]])))
    areas = area_maps(m)
    paths = save_debug_maps(m.data, areas, tmp_path, prefix="s1")
    assert sorted(p.name for p in paths) == ["s1_m.pgm", "s1_m_b.pgm", "s1_m_f.pgm", "s1_m_u.pgm"]
    unc = np.rint(read_pnm(tmp_path / "s1_m_u.pgm") * 255)
    assert unc[0, 0] == 255  # 0.5 * 510 = 255
    assert unc[0, 1] == round(510 * (1 - 1 / (1 + np.exp(-2.0))))
