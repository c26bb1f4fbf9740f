import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chanshuffle.csp import permute_channels
from chanshuffle.data import (
    AugmentConfig,
    ChannelStandardizer,
    NormStats,
    SynthSpec,
    TileGrid,
    augment_sample,
    compute_norm_stats,
    denormalize,
    load_manifest,
    make_sample,
    normalize,
    resize_bilinear,
    stats_from_images,
    stitch,
    synth_arrays,
    synth_generate,
    tile,
)
from chanshuffle.data.synth import spectral_signature
from chanshuffle.errors import (
    ClassOutOfRange,
    DataError,
    EmptyDataset,
    GridMismatch,
    InvalidConfig,
    IOFailure,
    ShapeMismatch,
)
from chanshuffle.raster import RasterImage, save_raster


# -- tiling ---------------------------------------------------------------------

def test_single_tile_is_input():
    x = np.random.default_rng(0).random((3, 512, 512)).astype(np.float32)
    tiles, grid = tile(x, 512, 512)
    assert len(tiles) == 1
    assert tiles[0].tobytes() == x.tobytes()


def test_large_scene_grid():
    grid = TileGrid.plan(6000, 6000, 512, 512)
    assert (grid.padded_height, grid.padded_width) == (6144, 6144)
    assert (grid.n_rows, grid.n_cols, len(grid)) == (12, 12, 144)


def test_overlapping_grid_positions():
    grid = TileGrid.plan(1000, 900, 512, 256)
    assert grid.row_starts == (0, 256, 488)
    assert grid.col_starts == (0, 256, 388)
    assert len(grid) == 9


def window_oracle(size, patch, stride):
    """Independent enumeration: step by stride until the edge is covered."""
    if size <= patch:
        return [0]
    starts, pos = [], 0
    while True:
        if stride < patch and pos + patch >= size:
            starts.append(size - patch)
            break
        starts.append(pos)
        if pos + patch >= size:
            break
        pos += stride
    return starts


@settings(max_examples=200)
@given(st.integers(1, 300), st.integers(1, 64), st.data())
def test_windows_cover_scene(size, patch, data):
    stride = data.draw(st.integers(1, patch))
    grid = TileGrid.plan(size, 3, patch, stride)
    starts = list(grid.row_starts)
    assert starts == window_oracle(size, patch, stride)
    assert starts == sorted(set(starts))
    covered = np.zeros(max(size, patch), bool)
    for s in starts:
        covered[s:s + patch] = True
        assert s + patch <= grid.padded_height
    assert covered[:size].all()
    if stride == patch and size > patch:
        assert grid.padded_height % patch == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.sampled_from([4, 8]), st.booleans(), st.integers(1, 3))
def test_tile_stitch_identity(h, w, patch, half, c):
    stride = patch // 2 if half else patch
    x = np.random.default_rng(h * 100 + w).standard_normal((c, h, w))
    tiles, grid = tile(x, patch, stride)
    out = stitch(tiles, grid)
    np.testing.assert_array_equal(out, x)


def test_tile_raster_keeps_bands():
    img = RasterImage.from_array(np.ones((3, 10, 10), np.float32))
    tiles, grid = tile(img, 8, 4)
    assert all(t.bands == ("R", "G", "B") for t in tiles)


def test_stitch_concatenates_without_overlap():
    grid = TileGrid.plan(4, 4, 2, 2)
    outs = [np.full((2, 2), float(i)) for i in range(4)]
    expected = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]], float)
    np.testing.assert_array_equal(stitch(outs, grid), expected)


def test_stitch_averages_overlap():
    grid = TileGrid.plan(1, 3, 2, 1)
    assert grid.col_starts == (0, 1)
    grid = TileGrid.plan(3, 3, 2, 1)
    outs = [np.full((1, 2, 2), v) for v in (0.2, 0.4, 0.2, 0.4)]
    out = stitch(outs, grid)
    assert out[0, 0, 1] == pytest.approx(0.3)


def test_stitch_grid_mismatch():
    tiles, grid = tile(np.zeros((1, 10, 10)), 4, 4)
    with pytest.raises(GridMismatch):
        stitch(tiles[:-1], grid)
    with pytest.raises(GridMismatch):
        stitch([t[:, :3] for t in tiles], grid)


def test_tile_rejects_bad_stride():
    with pytest.raises(InvalidConfig):
        TileGrid.plan(10, 10, 4, 5)


# -- augmentation ----------------------------------------------------------------

def test_augment_identity_when_forced():
    rng = np.random.default_rng(0)
    img = rng.random((3, 16, 16)).astype(np.float32)
    mask = rng.integers(0, 4, (16, 16)).astype(np.uint8)
    cfg = AugmentConfig(crop_size=16)
    out, m = augment_sample(img, mask, cfg, (0, 0), scale=1.0, offset=(0, 0), flip=False)
    assert out.tobytes() == img.tobytes()
    np.testing.assert_array_equal(m, mask)


def test_augment_downscale_pads_with_means_and_ignore():
    rng = np.random.default_rng(1)
    img = rng.random((3, 64, 64)).astype(np.float32)
    mask = rng.integers(0, 4, (64, 64)).astype(np.uint8)
    cfg = AugmentConfig(crop_size=64)
    out, m = augment_sample(img, mask, cfg, (0, 0), scale=0.5, offset=(0, 0), flip=False)
    assert out.shape == (3, 64, 64) and m.shape == (64, 64)
    small = resize_bilinear(img, 32, 32)
    means = small.reshape(3, -1).astype(np.float64).mean(axis=1).astype(np.float32)
    np.testing.assert_array_equal(out[:, 32:, :], np.broadcast_to(means[:, None, None], (3, 32, 64)))
    np.testing.assert_array_equal(out[:, :, 32:], np.broadcast_to(means[:, None, None], (3, 64, 32)))
    assert (m[32:, :] == 255).all() and (m[:, 32:] == 255).all()
    assert (m[:32, :32] != 255).all()


def test_flip_twice_is_identity():
    rng = np.random.default_rng(2)
    img = rng.random((2, 12, 12)).astype(np.float32)
    mask = rng.integers(0, 3, (12, 12)).astype(np.uint8)
    cfg = AugmentConfig(crop_size=12)
    once, m1 = augment_sample(img, mask, cfg, (0, 0), scale=1.0, offset=(0, 0), flip=True)
    twice, m2 = augment_sample(once, m1, cfg, (0, 0), scale=1.0, offset=(0, 0), flip=True)
    assert twice.tobytes() == img.tobytes()
    np.testing.assert_array_equal(m2, mask)


def test_augment_deterministic_per_key():
    img = np.random.default_rng(3).random((3, 20, 20)).astype(np.float32)
    cfg = AugmentConfig(crop_size=8, seed=5)
    a, _ = augment_sample(img, None, cfg, (1, 7))
    b, _ = augment_sample(img, None, cfg, (1, 7))
    assert a.tobytes() == b.tobytes()
    outs = {augment_sample(img, None, cfg, (0, i))[0].tobytes() for i in range(20)}
    assert len(outs) > 1


def test_augment_rejects_mismatched_mask():
    with pytest.raises(InvalidConfig):
        augment_sample(np.zeros((1, 8, 8)), np.zeros((4, 4)), AugmentConfig(crop_size=4), (0, 0))


def test_resize_same_size_identity():
    x = np.random.default_rng(4).random((2, 5, 5)).astype(np.float32)
    assert resize_bilinear(x, 5, 5).tobytes() == x.tobytes()


# -- normalization -----------------------------------------------------------------

def test_constant_channel_stats():
    s = stats_from_images([np.full((1, 4, 4), 3.0)])
    assert s.mean == (3.0,) and s.std == (1e-6,)


def test_two_value_channel_stats():
    x = np.array([[[0.0, 2.0], [2.0, 0.0]]])
    s = stats_from_images([x])
    assert s.mean == (1.0,) and s.std == (1.0,)


def test_stats_order_independent():
    imgs = [np.random.default_rng(i).random((3, 7, 5)).astype(np.float32) * 100 for i in range(12)]
    ref = stats_from_images(imgs)
    for seed in range(5):
        shuffled = list(imgs)
        random.Random(seed).shuffle(shuffled)
        assert stats_from_images(shuffled) == ref


def test_stats_empty():
    with pytest.raises(EmptyDataset):
        stats_from_images([])


def test_normalize_examples():
    stats = NormStats((1.0, 2.0), (0.5, 4.0))
    img = np.broadcast_to(np.array([1.0, 2.0])[:, None, None], (2, 3, 3))
    assert not normalize(img, stats).any()
    x = np.random.default_rng(5).random((2, 3, 3))
    assert normalize(x, NormStats.identity(2)).tobytes() == x.astype(np.float32).tobytes()
    np.testing.assert_allclose(denormalize(normalize(x, stats), stats), x, atol=1e-5)
    with pytest.raises(ShapeMismatch):
        normalize(np.zeros((3, 2, 2)), stats)


def test_channel_standardizer():
    X = np.random.default_rng(6).random((4, 3, 5, 5)) * 10
    sc = ChannelStandardizer().fit(X)
    Z = sc.transform(X)
    np.testing.assert_allclose(Z.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(Z.std(axis=(0, 2, 3)), 1, atol=1e-4)
    np.testing.assert_allclose(sc.inverse_transform(Z), X, atol=1e-4)


def test_norm_stats_json_round_trip():
    s = NormStats((0.1, 0.2), (1.5, 2.5))
    assert NormStats.from_json(json.loads(json.dumps(s.to_json()))) == s


# -- synthetic data / manifests --------------------------------------------------------

def test_spatial_cue_survives_channel_permutation():
    spec = SynthSpec("spatial-cue", num_classes=4, size=16, noise=0.0)
    for i in range(8):
        img, label = make_sample(spec, "train", i)
        perm = permute_channels(RasterImage.from_array(img), [2, 0, 1]).data
        # each plane still carries the same class texture (up to an affine level change)
        for p in perm:
            q = img[0]
            corr = np.corrcoef(p.ravel(), q.ravel())[0, 1]
            assert abs(corr) > 0.99


def test_spectral_cue_permutation_changes_signature():
    sigs = [tuple(spectral_signature(k, 3)) for k in range(3)]
    assert len(set(sigs)) == 3
    for k in range(3):
        permuted = tuple(np.asarray(sigs[k])[[1, 0, 2]])
        assert permuted != sigs[k]


def test_synth_deterministic():
    spec = SynthSpec("mixed", num_classes=3, size=12, channels=4, n_train=5, seed=7, task="segmentation")
    a = synth_arrays(spec, "train")
    b = synth_arrays(spec, "train")
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    assert set(np.unique(a[1])) <= {0, 1, 2, 255}


def test_synth_spec_validation():
    with pytest.raises(InvalidConfig):
        SynthSpec("spectral-cue", num_classes=7, channels=3)
    with pytest.raises(InvalidConfig):
        SynthSpec("nope")


def test_synth_generate_and_load(tmp_path):
    spec = SynthSpec("spatial-cue", num_classes=3, size=8, n_train=4, n_val=2, seed=1, task="segmentation")
    synth_generate(spec, tmp_path / "d")
    m = load_manifest(tmp_path / "d" / "manifest.json")
    assert m.bands == ["R", "G", "B"] and m.num_classes == 3
    images, masks = m.load_split("train")
    x, y = synth_arrays(spec, "train")
    for img, mask, xi, yi in zip(images, masks, x, y):
        assert img.data.tobytes() == xi.tobytes()
        np.testing.assert_array_equal(mask, yi)
    assert compute_norm_stats(m) == m.norm_stats
    raw1 = (tmp_path / "d" / "manifest.json").read_bytes()
    synth_generate(spec, tmp_path / "d")
    assert (tmp_path / "d" / "manifest.json").read_bytes() == raw1


def test_manifest_errors(tmp_path):
    spec = SynthSpec("spatial-cue", num_classes=2, size=8, n_train=2, n_val=0, seed=1, task="segmentation")
    synth_generate(spec, tmp_path)
    m = load_manifest(tmp_path / "manifest.json")
    bad = m.samples("train")[0]
    save_raster(RasterImage(np.full((1, 8, 8), 7, np.uint8), ("label",)), m.resolve(bad.mask))
    with pytest.raises(ClassOutOfRange):
        m.load_mask(bad)
    save_raster(RasterImage(np.zeros((2, 8, 8), np.float32), ("R", "G")), m.resolve(bad.image))
    with pytest.raises(ShapeMismatch):
        m.load_image(bad)
    (tmp_path / "broken.json").write_text("{nope")
    with pytest.raises(DataError):
        load_manifest(tmp_path / "broken.json")
    with pytest.raises(IOFailure):
        load_manifest(tmp_path / "absent.json")
    obj = json.loads((tmp_path / "manifest.json").read_text())
    obj["splits"]["train"][0]["image"] = "missing.mbr"
    (tmp_path / "m2.json").write_text(json.dumps(obj))
    with pytest.raises(IOFailure):
        load_manifest(tmp_path / "m2.json")
