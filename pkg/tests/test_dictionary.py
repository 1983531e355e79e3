import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfsc.dictionary import (DEFAULT_LEVELS, DictionaryError, LfDictionary, batch_omp,
                             build_dictionary, canvas_size, central_crop, content_hash,
                             dct_fallback_atoms, extract_training_patches, lattice_offsets,
                             shear_vector, synthesize_lf_atom, train_ksvd, warp_crop)

M = 30
C0 = 11


def random_canvas(seed, k=None):
    rng = np.random.default_rng(seed)
    shape = (M, M) if k is None else (k, M, M)
    return rng.normal(size=shape)


# -- lattice and shear -------------------------------------------------------


def test_lattice_values_exact():
    H, V = lattice_offsets()
    steps = np.arange(8) - 3.5
    for i in range(8):
        assert (H[i] == steps[i]).all()
        assert (V[:, i] == steps[i]).all()
    assert set(H.ravel()) == set(steps)
    # 1-based (1,1) and (4,4) in the usual notation
    assert (H[0, 0], V[0, 0]) == (-3.5, -3.5)
    assert (H[3, 3], V[3, 3]) == (-0.5, -0.5)
    assert H.sum() == 0 and V.sum() == 0


def test_lattice_rejects_other_dims():
    with pytest.raises(DictionaryError):
        lattice_offsets(7, 8)


@pytest.mark.parametrize("dp,view,expected", [
    (0.0, (5, 2), (0.0, 0.0)),
    (3.0, (0, 0), (-10.5, -10.5)),
    (0.3, (4, 3), (0.15, -0.15)),
])
def test_shear_vector(dp, view, expected):
    np.testing.assert_allclose(shear_vector(dp, view), expected, atol=1e-12)


def test_canvas_size_default():
    assert canvas_size() == 30


# -- warp ---------------------------------------------------------------------


def test_warp_zero_is_central_crop():
    a = random_canvas(0)
    assert np.array_equal(warp_crop(a, (0, 0)), a[C0:C0 + 8, C0:C0 + 8])


@given(st.integers(-11, 11), st.integers(-11, 11))
def test_warp_integer_shift_matches_indexing(dx, dy):
    a = random_canvas(1)
    out = warp_crop(a, (dx, dy))
    np.testing.assert_allclose(out, a[C0 + dy:C0 + dy + 8, C0 + dx:C0 + dx + 8], atol=1e-12)


def test_warp_half_pixel_is_neighbour_mean():
    a = random_canvas(2)
    out = warp_crop(a, (0.5, 0))
    ref = 0.5 * (a[C0:C0 + 8, C0:C0 + 8] + a[C0:C0 + 8, C0 + 1:C0 + 9])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def _bilinear_oracle(a, dx, dy):
    out = np.zeros((8, 8))
    for y in range(8):
        for x in range(8):
            sy, sx = C0 + y + dy, C0 + x + dx
            for yy in range(M):
                for xx in range(M):
                    wy = max(0.0, 1 - abs(sy - yy))
                    wx = max(0.0, 1 - abs(sx - xx))
                    out[y, x] += wy * wx * a[yy, xx]
    return out


def test_warp_fractional_against_brute_force():
    a = random_canvas(3)
    np.testing.assert_allclose(warp_crop(a, (-2.3, 1.7)), _bilinear_oracle(a, -2.3, 1.7), atol=1e-10)


@given(st.floats(-11, 11), st.floats(-11, 11), st.floats(-5, 5), st.floats(-5, 5))
def test_warp_linear(dx, dy, alpha, beta):
    a, b = random_canvas(4), random_canvas(5)
    lhs = warp_crop(alpha * a + beta * b, (dx, dy))
    rhs = alpha * warp_crop(a, (dx, dy)) + beta * warp_crop(b, (dx, dy))
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_warp_integer_composition():
    a = random_canvas(6)
    once = warp_crop(a, (1, 0), patch_size=8)
    # shift the canvas by one column and warp again: same as a shift of two
    shifted = np.zeros_like(a)
    shifted[:, :-1] = a[:, 1:]
    twice = warp_crop(shifted, (1, 0))
    np.testing.assert_allclose(twice, warp_crop(a, (2, 0)), atol=1e-9)
    np.testing.assert_allclose(once, a[C0:C0 + 8, C0 + 1:C0 + 9], atol=1e-12)


def test_warp_beyond_margin_rejected():
    with pytest.raises(DictionaryError):
        warp_crop(random_canvas(7), (11.01, 0))


# -- light field atoms ---------------------------------------------------------


def test_lf_atom_at_zero_disparity_replicates_crop():
    a = random_canvas(8)
    col = synthesize_lf_atom(a, 0.0)
    crop = a[C0:C0 + 8, C0:C0 + 8].ravel()
    blocks = col.reshape(64, 64)
    for v in range(64):
        np.testing.assert_array_equal(blocks[v], blocks[0])
    np.testing.assert_allclose(blocks[0], crop / np.linalg.norm(np.tile(crop, 64)), atol=1e-15)


def test_lf_atom_single_pixel_footprint():
    a = np.zeros((M, M))
    py, px = 16, 13
    a[py, px] = 1.0
    col = synthesize_lf_atom(a, 1.0).reshape(8, 8, 8, 8)
    H, V = lattice_offsets()
    for i in range(8):
        for j in range(8):
            dx, dy = H[i, j], V[i, j]
            expected = np.zeros((8, 8))
            for y in range(8):
                for x in range(8):
                    wy = max(0.0, 1 - abs(C0 + y + dy - py))
                    wx = max(0.0, 1 - abs(C0 + x + dx - px))
                    expected[y, x] = wy * wx
            assert np.array_equal(col[i, j] != 0, expected != 0)
            assert np.count_nonzero(expected) <= 4


@given(st.sampled_from(DEFAULT_LEVELS))
def test_segment_columns_unit_norm(dp):
    d = build_dictionary(random_canvas(9, 5), DEFAULT_LEVELS)
    seg = d.segment_rows(dp)
    np.testing.assert_allclose(np.linalg.norm(seg, axis=1), 1.0, atol=1e-12)


def test_default_dictionary_dims(dictionary):
    assert dictionary.logical_shape == (4096, 8400)
    assert dictionary.n_levels == 21 and dictionary.n_atoms == 400
    seg = dictionary.segment(0)
    assert seg.shape == (4096, 400)
    np.testing.assert_allclose(dictionary.levels, np.arange(-3.0, 3.01, 0.3), atol=1e-6)


def test_tiny_dictionary_full_matrix():
    d = build_dictionary(random_canvas(10, 1), [0.6])
    assert d.full_matrix().shape == (4096, 1)


def test_full_matrix_orders_segments_by_level():
    d = build_dictionary(random_canvas(11, 2), [-0.3, 0.0, 0.3])
    full = d.full_matrix()
    assert full.shape == (4096, 6)
    np.testing.assert_array_equal(full[:, 2:4], d.segment(1))
    with pytest.raises(DictionaryError):
        build_dictionary(random_canvas(11, 2), [0.3, 0.0])


def test_restricted_columns(dictionary):
    dn, scale = dictionary.restricted(0.6, (15, 57, 63))
    seg = dictionary.segment_rows(0.6)
    rows = np.concatenate([np.arange(s * 64, s * 64 + 64) for s in (15, 57, 63)])
    np.testing.assert_allclose(dn * scale[None, :], seg[:, rows].T, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(dn, axis=0), 1.0, atol=1e-12)


def test_atoms_crop_normalised_and_hash_sensitive():
    atoms = random_canvas(12, 4)
    d = build_dictionary(atoms)
    np.testing.assert_allclose(np.linalg.norm(central_crop(d.atoms).reshape(4, -1), axis=1), 1.0,
                               atol=1e-9)
    bumped = d.atoms_f32.copy()
    bumped[2, 5, 5] += 2e-6
    assert content_hash(bumped, d.levels, 8) != d.content_hash
    assert build_dictionary(atoms).content_hash == d.content_hash


def test_lfd_round_trip(tmp_path):
    d = build_dictionary(random_canvas(13, 3), [-0.3, 0.0, 0.9])
    p = str(tmp_path / "x.lfd")
    d.save(p)
    e = LfDictionary.load(p)
    assert e.content_hash == d.content_hash
    np.testing.assert_array_equal(e.atoms, d.atoms)
    np.testing.assert_array_equal(e.segment_rows(0.9), d.segment_rows(0.9))
    raw = bytearray(open(p, "rb").read())
    raw[40] ^= 0xFF
    with pytest.raises(DictionaryError):
        LfDictionary.from_bytes(bytes(raw))
    with pytest.raises(DictionaryError):
        LfDictionary.from_bytes(bytes(raw[:-3]))


def test_lfd_layout(tmp_path):
    d = build_dictionary(random_canvas(14, 2), [0.0, 0.3])
    data = d.to_bytes()
    assert data[:4] == b"LFD1"
    assert len(data) == 4 + 2 + 2 + 1 + 2 + 4 * 2 + 4 * 2 * 30 * 30 + 8


# -- cosine fallback -------------------------------------------------------------


def test_fallback_atoms():
    a = dct_fallback_atoms()
    assert a.shape == (400, 30, 30)
    crop = central_crop(a)
    assert np.ptp(crop[0]) < 1e-12  # constant
    flat = crop.reshape(400, -1)
    np.testing.assert_allclose(np.linalg.norm(flat, axis=1), 1.0, atol=1e-12)
    gram = np.abs(flat @ flat.T)
    np.fill_diagonal(gram, 0.0)
    assert gram.max() < 1.0 - 1e-6
    assert np.array_equal(a, dct_fallback_atoms())


# -- K-SVD -----------------------------------------------------------------------


def test_batch_omp_recovers_sparse_codes():
    rng = np.random.default_rng(0)
    D = rng.normal(size=(64, 100))
    D /= np.linalg.norm(D, axis=0)
    A = np.zeros((100, 50))
    for j in range(50):
        idx = rng.choice(100, 3, replace=False)
        A[idx, j] = rng.uniform(1, 3, 3) * rng.choice([-1, 1], 3)
    codes = batch_omp(D, D @ A, 3)
    np.testing.assert_allclose(D @ codes, D @ A, atol=1e-6)


def test_ksvd_orthonormal_corpus_is_recovered():
    q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(36, 36)))
    patches = q.T.copy()  # 36 orthonormal signals
    res = train_ksvd(patches, k_c=36, sparsity=1, iterations=3, seed=0)
    G = np.abs(res.atoms.reshape(36, -1) @ q)
    assert np.allclose(np.sort(G.max(axis=0)), 1.0, atol=1e-9)
    assert res.objective[-1] < 1e-18


def test_ksvd_planted_bank_recovery():
    rng = np.random.default_rng(2)
    bank = rng.normal(size=(64, 100))
    bank /= np.linalg.norm(bank, axis=0)
    X = np.zeros((64, 3000))
    for j in range(3000):
        idx = rng.choice(100, 3, replace=False)
        X[:, j] = bank[:, idx] @ rng.normal(size=3)
    res = train_ksvd(X.T, k_c=100, sparsity=3, iterations=25, seed=4)
    learned = res.atoms.reshape(100, -1)
    corr = np.abs(learned @ bank).max(axis=0)
    assert (corr > 0.95).mean() >= 0.8


def test_ksvd_monotone_and_deterministic():
    rng = np.random.default_rng(3)
    patches = rng.normal(size=(600, 10, 10)).cumsum(axis=1).cumsum(axis=2)
    a = train_ksvd(patches, 50, 4, 5, seed=9)
    b = train_ksvd(patches, 50, 4, 5, seed=9)
    assert np.array_equal(a.atoms, b.atoms) and a.objective == b.objective
    assert all(y <= x for x, y in zip(a.objective, a.objective[1:]))
    c = train_ksvd(patches, 50, 4, 1, seed=10)
    assert not np.array_equal(a.atoms, c.atoms)


def test_ksvd_errors():
    with pytest.raises(DictionaryError):
        train_ksvd(np.ones((10, 4, 4)), k_c=20)
    with pytest.raises(DictionaryError):
        train_ksvd(np.zeros((50, 4, 4)), k_c=20)


def test_training_patch_extraction():
    rng = np.random.default_rng(5)
    imgs = [rng.normal(size=(40, 50)) * 20 + 100]
    p = extract_training_patches(imgs, 30, 25, seed=1)
    assert p.shape == (25, 30, 30)
    np.testing.assert_allclose(p.mean(axis=(1, 2)), 0.0, atol=1e-9)
    assert np.array_equal(p, extract_training_patches(imgs, 30, 25, seed=1))
    with pytest.raises(DictionaryError):
        extract_training_patches([np.zeros((10, 10))], 30, 5)
