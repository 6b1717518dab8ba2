import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uacanet.data import (
    AugmentConfig,
    PNMError,
    Sample,
    augment,
    dilate,
    erode,
    flip,
    load_dataset,
    parse_pnm,
    read_image,
    read_mask,
    synth_blobs,
    write_dataset,
    write_pgm,
    write_ppm,
)


# ---------------------------------------------------------------- PNM
def test_mask_threshold_at_128(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 127]))
    np.testing.assert_array_equal(read_mask(path)[0], [[0, 1], [1, 0]])


def test_white_ppm_pixel(tmp_path):
    path = tmp_path / "w.ppm"
    path.write_bytes(b"P6 1 1 255\n" + bytes([255, 255, 255]))
    np.testing.assert_array_equal(read_image(path)[:, 0, 0], [1.0, 1.0, 1.0])


def test_comments_and_16_bit():
    buf = b"P5\n# a comment\n2 1\n# another\n65535\n" + np.array([0, 65535], ">u2").tobytes()
    np.testing.assert_array_equal(parse_pnm(buf), [[0.0, 1.0]])


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_binary_mask_roundtrip(tmp_path_factory, h, w, seed):
    mask = (np.random.default_rng(seed).uniform(size=(h, w)) > 0.5).astype(np.uint8) * 255
    path = tmp_path_factory.mktemp("rt") / "m.pgm"
    write_pgm(path, mask)
    np.testing.assert_array_equal(read_mask(path)[0], mask / 255)


def test_ppm_roundtrip(tmp_path):
    pix = np.random.default_rng(0).integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
    write_ppm(tmp_path / "i.ppm", pix)
    np.testing.assert_array_equal(np.rint(read_image(tmp_path / "i.ppm") * 255).transpose(1, 2, 0), pix)


def test_bad_magic_and_truncation_report_offsets():
    with pytest.raises(PNMError, match="offset 0"):
        parse_pnm(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(PNMError, match="truncated.*offset 14") as err:
        parse_pnm(b"P6\n2 1\n255\n" + bytes(3))
    assert err.value.offset == 14


# ---------------------------------------------------------------- dataset layout
def _write_pair(root, stem, image=True, mask=True):
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    if image:
        write_ppm(root / "images" / f"{stem}.ppm", np.zeros((4, 4, 3), np.uint8))
    if mask:
        write_pgm(root / "masks" / f"{stem}.pgm", np.zeros((4, 4), np.uint8))


def test_load_dataset_sorted_by_stem(tmp_path):
    for stem in ("c", "a", "b"):
        _write_pair(tmp_path, stem)
    samples = load_dataset(tmp_path)
    assert [s.source.split("/")[-1] for s in samples] == ["a.ppm", "b.ppm", "c.ppm"]


def test_unmatched_stems_are_warned_and_excluded(tmp_path, caplog):
    _write_pair(tmp_path, "a")
    _write_pair(tmp_path, "b")
    _write_pair(tmp_path, "lonely", mask=False)
    _write_pair(tmp_path, "orphan", image=False)
    with caplog.at_level(logging.WARNING):
        samples = load_dataset(tmp_path)
    assert len(samples) == 2  # |{a, b, lonely} & {a, b, orphan}|
    assert "lonely" in caplog.text and "orphan" in caplog.text


def test_empty_intersection_rejected(tmp_path):
    _write_pair(tmp_path, "a", mask=False)
    _write_pair(tmp_path, "b", image=False)
    with pytest.raises(ValueError):
        load_dataset(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing")


def test_unreadable_sample_is_skipped(tmp_path):
    _write_pair(tmp_path, "a")
    _write_pair(tmp_path, "b")
    (tmp_path / "images" / "b.ppm").write_bytes(b"P6\n4 4\n255\n" + bytes(5))
    assert len(load_dataset(tmp_path)) == 1


# ---------------------------------------------------------------- synthetic data
def test_synth_is_deterministic_and_binary():
    a, b = synth_blobs(6, 64, seed=3), synth_blobs(6, 64, seed=3)
    for s, t in zip(a, b):
        assert np.array_equal(s.image, t.image) and np.array_equal(s.mask, t.mask)
        assert set(np.unique(s.mask)) <= {0.0, 1.0}
        assert s.image.shape == (3, 64, 64) and 0 <= s.image.min() and s.image.max() <= 1
    assert not np.array_equal(a[0].image, synth_blobs(1, 64, seed=4)[0].image)


def test_synth_foreground_fraction_bounds():
    fractions = [s.mask.mean() for s in synth_blobs(200, 64, seed=11)]
    assert min(fractions) >= 0.01 and max(fractions) <= 0.5


def test_synth_rejects_small_side():
    with pytest.raises(ValueError):
        synth_blobs(1, 16)


def test_write_dataset_roundtrip(tmp_path):
    samples = synth_blobs(3, 32, seed=0)
    write_dataset(samples, tmp_path)
    loaded = load_dataset(tmp_path)
    assert len(loaded) == 3
    for s, t in zip(samples, loaded):
        np.testing.assert_array_equal(s.mask, t.mask)
        assert np.max(np.abs(s.image - t.image)) <= 0.5 / 255 + 1e-6


# ---------------------------------------------------------------- augmentation
def _blob(side=32):
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    mask = ((yy - side / 2) ** 2 + (xx - side / 2) ** 2 <= (side / 4) ** 2).astype(np.float32)[None]
    image = np.random.default_rng(0).uniform(size=(3, side, side)).astype(np.float32)
    return Sample(image, mask, "blob")


def test_disabled_augmentation_is_identity():
    s = _blob()
    out = augment(s, AugmentConfig.disabled(), np.random.default_rng(0))
    assert np.array_equal(out.image, s.image) and np.array_equal(out.mask, s.mask)


def test_double_flip_is_identity():
    s = _blob()
    twice = flip(flip(s))
    assert np.array_equal(twice.image, s.image) and np.array_equal(twice.mask, s.mask)


def test_dilation_of_single_pixel_is_plus():
    m = np.zeros((5, 5), np.float32)
    m[2, 2] = 1
    out = dilate(m, 1)
    expected = np.zeros((5, 5))
    expected[1:4, 2] = expected[2, 1:4] = 1
    np.testing.assert_array_equal(out, expected)


@settings(max_examples=20, deadline=None)
@given(r=st.integers(0, 3), seed=st.integers(0, 2**31))
def test_morphology_inclusions(r, seed):
    m = (np.random.default_rng(seed).uniform(size=(12, 12)) > 0.6).astype(np.float32)
    assert np.all(dilate(m, r) >= m) and np.all(erode(m, r) <= m)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_augmented_sample_invariants(seed):
    s = _blob()
    out = augment(s, AugmentConfig(), np.random.default_rng(seed))
    assert out.image.shape == s.image.shape and out.mask.shape == s.mask.shape
    assert set(np.unique(out.mask)) <= {0.0, 1.0}
    assert 0.0 <= out.image.min() and out.image.max() <= 1.0


@settings(max_examples=20, deadline=None)
@given(angle=st.floats(0, 359))
def test_rotation_preserves_disk_area(angle):
    s = _blob(64)
    cfg = AugmentConfig(0.0, 0.0, (1.0, 1.0), (angle, angle), (0, 0))
    out = augment(s, cfg, np.random.default_rng(0))
    assert abs(out.mask.sum() - s.mask.sum()) < 0.05 * s.mask.sum()


def test_augmentation_deterministic_per_rng():
    s = _blob()
    a = augment(s, AugmentConfig(), np.random.default_rng([1, 2]))
    b = augment(s, AugmentConfig(), np.random.default_rng([1, 2]))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(flip_h=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(scale_range=(0.0, 1.0))
