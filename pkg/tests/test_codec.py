import math

import numpy as np
import pytest

from conftest import render_cached
from lfsc.bitstream import HashMismatchError, StreamError, read_stream
from lfsc.codec import (EncoderConfig, decode_stream, encode_baseline, encode_lf,
                        residual_views, serpentine_order)
from lfsc.dictionary import build_dictionary, dct_fallback_atoms
from lfsc.evaluation import psnr_lf
from lfsc.lf_core import LightField, default_valid_mask
from lfsc.synth import two_plane_scene


@pytest.fixture(scope="module")
def scene():
    lf, _ = render_cached(two_plane_scene(-0.3, 0.9, seed=5, size=32))
    return lf


@pytest.fixture(scope="module")
def encoded(scene, dictionary):
    return encode_lf(scene, dictionary, EncoderConfig(q_res=22))


def test_serpentine_order():
    views = [(s, t) for s in range(3) for t in range(3)]
    order = [views[i] for i in serpentine_order(views)]
    assert order == [(0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (1, 0), (2, 0), (2, 1), (2, 2)]


def test_residual_view_count():
    views = residual_views(default_valid_mask(15, 15), EncoderConfig().layout.views)
    assert len(views) == 160 and (7, 7) not in views


def test_decode_matches_encoder(encoded, dictionary):
    for threads in (1, 4):
        dec = decode_stream(encoded.stream, dictionary, threads=threads)
        assert dec.lf.equals(encoded.reconstruction)
        assert dec.approximation.equals(encoded.approximation)


def test_reported_psnr_is_decoded_psnr(encoded, scene, dictionary):
    dec = decode_stream(encoded.stream, dictionary)
    assert psnr_lf(scene, dec.lf) == encoded.psnr


def test_residual_improves_on_approximation(encoded, scene):
    assert encoded.psnr["y"] > psnr_lf(scene, encoded.approximation)["y"]


def test_thread_count_does_not_change_stream(scene, dictionary, encoded):
    again = encode_lf(scene, dictionary, EncoderConfig(q_res=22), threads=4)
    assert again.stream == encoded.stream


def test_wrong_dictionary_rejected(encoded):
    other = build_dictionary(dct_fallback_atoms(k_c=256))
    with pytest.raises(HashMismatchError):
        decode_stream(encoded.stream, other)


def test_corrupt_stream_rejected(encoded, dictionary):
    data = bytearray(encoded.stream)
    data[len(data) // 2] ^= 0x40
    with pytest.raises(StreamError):
        decode_stream(bytes(data), dictionary)
    with pytest.raises(StreamError):
        decode_stream(encoded.stream[:-3], dictionary)


def test_flat_gray_light_field_is_nearly_free(dictionary):
    y = np.full((15, 15, 64, 64), 128, np.uint8)
    c = np.full((15, 15, 32, 32), 128, np.uint8)
    lf = LightField(y, c.copy(), c.copy())
    res = encode_lf(lf, dictionary)
    assert res.reconstruction.equals(lf)
    acc = res.accounting
    assert acc["bytes"]["residual"] * 8 / (64 * 64 * 165) < 0.01
    # zero residual: one bit per plane plus the order table and sequence header
    views = residual_views(lf.valid_mask, EncoderConfig().layout.views)
    order = serpentine_order(views)
    deltas = [b - a - 1 for a, b in zip([-1] + order[:-1], order)]
    se_bits = sum(2 * int(math.floor(math.log2(2 * abs(d) + (d <= 0)))) + 1 for d in deltas)
    header = 5 + 3 * 4
    assert acc["bytes"]["residual"] == header + (se_bits + 3 * len(views) + 7) // 8


def test_finer_q_costs_more_and_looks_better(scene, dictionary):
    cache = {}
    coarse = encode_lf(scene, dictionary, EncoderConfig(q_res=34), approximation_cache=cache)
    fine = encode_lf(scene, dictionary, EncoderConfig(q_res=16), approximation_cache=cache)
    assert len(fine.stream) > len(coarse.stream)
    assert fine.psnr["yuv"] > coarse.psnr["yuv"]
    assert len(cache) == 1


def test_masked_key_view_rejected(scene, dictionary):
    lf = scene.copy()
    lf.valid_mask[7, 7] = False
    with pytest.raises(ValueError):
        encode_lf(lf, dictionary)


def test_baseline(scene):
    b = encode_baseline(scene, 22)
    assert b.bpp == pytest.approx(8 * len(b.payload) / (32 * 32 * 165))
    assert b.psnr == psnr_lf(scene, b.reconstruction)
    assert 25 < b.psnr["y"] < 60


def test_header_records_configuration(encoded, dictionary):
    h = read_stream(encoded.stream).header
    assert (h.q_skv, h.q_res, h.max_coeffs) == (16, 22, 30)
    assert h.dict_hash == dictionary.content_hash
    assert h.eval_views == 165
