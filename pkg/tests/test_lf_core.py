import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lfsc.coder import segment_regions
from lfsc.lf_core import (LightField, LightFieldError, PatchGrid, assemble_overlap_average,
                          default_valid_mask, downsample_420, extract_all_patches,
                          extract_patch_stack, lf_to_rgb_views, load_lf, load_raw,
                          raw_container_size, rgb_to_ycbcr, rgb_views_to_lf, save_lf, save_raw,
                          ycbcr_to_rgb)
from PIL import Image


def random_lf(rng, rows=3, cols=4, h=7, w=10):
    y = rng.integers(0, 256, (rows, cols, h, w), dtype=np.uint8)
    u = rng.integers(0, 256, (rows, cols, (h + 1) // 2, (w + 1) // 2), dtype=np.uint8)
    v = rng.integers(0, 256, (rows, cols, (h + 1) // 2, (w + 1) // 2), dtype=np.uint8)
    return LightField(y, u, v, rng.random((rows, cols)) < 0.7)


def test_default_mask_has_165_views():
    m = default_valid_mask(15, 15)
    assert m.sum() == 165
    assert not m[0].any() and not m[-1].any() and not m[:, 0].any() and not m[:, -1].any()
    for corner in [(1, 1), (1, 13), (13, 1), (13, 13)]:
        assert not m[corner]
    assert m[7, 7] and m[1, 2]


def test_single_view_grid_mask_all_true():
    lf = LightField(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)))
    assert lf.valid_mask.all()


def test_chroma_shape_is_checked():
    with pytest.raises(LightFieldError):
        LightField(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)))
    lf = LightField(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 3, 3)))
    assert lf.u.shape == (1, 1, 3, 3)


def test_bit_depth_rejected():
    with pytest.raises(LightFieldError):
        LightField(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)),
                   bit_depth=10)


@given(arrays(np.uint8, (6, 5, 3)))
def test_colour_round_trip_within_one_level(rgb):
    back = ycbcr_to_rgb(rgb_to_ycbcr(rgb))
    assert np.abs(back.astype(int) - rgb.astype(int)).max() <= 1


def test_colour_known_values():
    # full-range BT.601: white, black and pure red
    out = rgb_to_ycbcr(np.array([[255, 255, 255], [0, 0, 0], [255, 0, 0]], dtype=np.uint8))
    np.testing.assert_array_equal(out, [[255, 128, 128], [0, 128, 128], [76, 85, 255]])


def test_downsample_420_oracle(rng):
    plane = rng.integers(0, 256, (7, 9))
    out = downsample_420(plane)
    assert out.shape == (4, 5)
    padded = np.pad(plane, ((0, 1), (0, 1)), mode="edge")
    for i in range(4):
        for j in range(5):
            s = int(padded[2 * i:2 * i + 2, 2 * j:2 * j + 2].sum())
            assert out[i, j] == (s + 2) // 4


def test_rgb_views_conversion_shapes(rng):
    rgb = rng.integers(0, 256, (2, 3, 6, 8, 3), dtype=np.uint8)
    lf = rgb_views_to_lf(rgb)
    assert lf.y.shape == (2, 3, 6, 8) and lf.u.shape == (2, 3, 3, 4)
    assert lf_to_rgb_views(lf).shape == rgb.shape


def test_directory_round_trip(tmp_path, rng):
    lf = random_lf(rng)
    save_lf(lf, str(tmp_path / "lf"))
    assert load_lf(str(tmp_path / "lf")).equals(lf)


def test_full_grid_writes_225_files_plus_manifest(tmp_path, rng):
    lf = random_lf(rng, 15, 15, 4, 4)
    lf = LightField(lf.y, lf.u, lf.v)
    save_lf(lf, str(tmp_path / "lf"))
    names = os.listdir(tmp_path / "lf")
    assert len([n for n in names if n.startswith("view_")]) == 225
    assert "manifest.json" in names
    back = load_lf(str(tmp_path / "lf"))
    assert back.valid_mask.sum() == 165 and back.equals(lf)


def test_raw_round_trip_and_size(tmp_path, rng):
    lf = random_lf(rng, 3, 5, 7, 9)
    p = str(tmp_path / "a.lfraw")
    save_raw(lf, p)
    # magic + 4 u16 + 2 u8 + mask bytes + planes
    expected = 4 + 8 + 2 + 2 + 15 * (63 + 2 * 4 * 5)
    assert os.path.getsize(p) == expected == raw_container_size(3, 5, 9, 7)
    assert load_raw(p).equals(lf)
    assert load_lf(p).equals(lf)


def test_raw_rejects_truncation_and_magic(tmp_path, rng):
    lf = random_lf(rng)
    p = tmp_path / "a.lfraw"
    save_raw(lf, str(p))
    data = p.read_bytes()
    p.write_bytes(data[:-1])
    with pytest.raises(LightFieldError):
        load_raw(str(p))
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(LightFieldError):
        load_raw(str(p))


def test_rgb_directory_without_manifest(tmp_path, rng):
    rgb = rng.integers(0, 256, (2, 2, 6, 4, 3), dtype=np.uint8)
    for s in range(2):
        for t in range(2):
            Image.fromarray(rgb[s, t]).save(tmp_path / f"view_{s:02}_{t:02}.png")
    lf = load_lf(str(tmp_path))
    assert lf.equals(rgb_views_to_lf(rgb))


def test_missing_and_mismatched_views(tmp_path, rng):
    img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
    for s, t in [(0, 0), (0, 1), (1, 0)]:
        Image.fromarray(img).save(tmp_path / f"view_{s:02}_{t:02}.png")
    with pytest.raises(LightFieldError, match="missing"):
        load_lf(str(tmp_path))
    Image.fromarray(np.zeros((5, 4, 3), np.uint8)).save(tmp_path / "view_01_01.png")
    with pytest.raises(LightFieldError, match="mismatched"):
        load_lf(str(tmp_path))


def test_sixteen_bit_views_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint16)).save(tmp_path / "view_00_00.png")
    with pytest.raises(LightFieldError, match="bit depth"):
        load_lf(str(tmp_path))


# -- patches --------------------------------------------------------------


@given(st.integers(8, 40), st.integers(8, 40), st.integers(1, 8))
def test_patch_grid_covers_and_clamps(h, w, stride):
    g = PatchGrid(h, w, 8, stride)
    assert (g.weights >= 1).all()
    assert max(g.xs) == w - 8 and max(g.ys) == h - 8
    assert len(g.origins) == len(g)


def test_patch_stack_indexing(rng):
    views = rng.integers(0, 256, (15, 15, 20, 24), dtype=np.uint8)
    reg = segment_regions()[3]
    vec = extract_patch_stack(views, reg, (5, 3))
    assert vec.shape == (4096,)
    # first 64 entries: top-left view of the region, rows then columns
    np.testing.assert_array_equal(vec[:64], views[7, 7, 3:11, 5:13].ravel())
    # view slot 9 = local (1, 1)
    np.testing.assert_array_equal(vec[9 * 64:10 * 64], views[8, 8, 3:11, 5:13].ravel())
    with pytest.raises(LightFieldError):
        extract_patch_stack(views, reg, (17, 0))


def test_patch_stack_of_constant_lf():
    views = np.full((15, 15, 16, 16), 50, dtype=np.uint8)
    assert (extract_patch_stack(views, segment_regions()[0], (0, 0)) == 50).all()


@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_extract_then_assemble_is_identity(stride, seed):
    rng = np.random.default_rng(seed)
    views = rng.integers(0, 256, (2, 2, 13, 17)).astype(np.float64)
    g = PatchGrid(13, 17, 8, stride)
    stacks = extract_all_patches(views, g)
    out = assemble_overlap_average(zip(g.origins, stacks), g, 4)
    np.testing.assert_allclose(out, views.reshape(4, 13, 17), atol=1e-9)


def test_coverage_matches_brute_force():
    g = PatchGrid(16, 16, 8, 4)
    brute = np.zeros((16, 16), int)
    for y in range(16):
        for x in range(16):
            brute[y, x] = sum(1 for ox, oy in g.origins if ox <= x < ox + 8 and oy <= y < oy + 8)
    np.testing.assert_array_equal(g.weights, brute)
    assert brute[4:12, 4:12].min() == 4


def test_assemble_constant_and_tiling():
    g = PatchGrid(16, 16, 8, 8)
    out = assemble_overlap_average(((o, np.full(64, 7.0)) for o in g.origins), g, 1)
    assert (out == 7.0).all()
    tiles = [(o, np.full(64, float(i))) for i, o in enumerate(g.origins)]
    out = assemble_overlap_average(tiles, g, 1)[0]
    assert out[0, 0] == 0 and out[0, 8] == 1 and out[8, 0] == 2 and out[15, 15] == 3


def test_assemble_uncovered_is_error():
    g = PatchGrid(16, 16, 8, 8)
    with pytest.raises(RuntimeError):
        assemble_overlap_average([((0, 0), np.zeros(64))], g, 1)
