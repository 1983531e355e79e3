"""End-to-end encoder and decoder.

Encoder::

    disparity map (luma, all valid views)  -> lossless map section
    five key views                         -> intra section at q_skv, decoded again
    sparse approximation from the decoded key views and decoded map
    residual (original - approximation) of the other valid views -> section at q_res

The decoder repeats the approximation from the same decoded inputs and adds
the decoded residuals.  Key views are output as decoded; views outside the
valid mask get the approximation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bitstream as bs
from .coder import CoderParams, SkvLayout, approximate_lf
from .dictionary import LfDictionary
from .disparity import DisparityMap, estimate_disparity
from .lf_core import LightField, PatchGrid
from .residual_codec import (CodecError, decode_disparity_map, decode_sequence,
                             encode_disparity_map, encode_sequence, step_q16)

RESIDUAL_OFFSET = 128


@dataclass(frozen=True)
class EncoderConfig:
    q_skv: int = 16
    q_res: int = 22
    eps: float = 5.0
    max_coeffs: int = 30
    patch_size: int = 8
    stride: int = 4
    cost_window: int = 2
    layout: SkvLayout = SkvLayout()

    def __post_init__(self):
        step_q16(self.q_skv)
        step_q16(self.q_res)

    @property
    def coder_params(self) -> CoderParams:
        return CoderParams(self.patch_size, self.stride, self.eps, self.max_coeffs, self.layout)


@dataclass
class EncodeResult:
    stream: bytes
    header: bs.StreamHeader
    reconstruction: LightField
    approximation: LightField
    disparity: DisparityMap
    psnr: dict = field(default_factory=dict)
    accounting: dict = field(default_factory=dict)


@dataclass
class DecodeResult:
    lf: LightField
    approximation: LightField
    header: bs.StreamHeader
    disparity: DisparityMap


def serpentine_order(views: list[tuple[int, int]]) -> list[int]:
    """Coding order for a raster-ordered view list: even rows left to right,
    odd rows right to left."""
    return sorted(range(len(views)), key=lambda i: (views[i][0], views[i][1] if views[i][0] % 2 == 0
                                                    else -views[i][1]))


def residual_views(mask: np.ndarray, layout) -> list[tuple[int, int]]:
    skv = set(map(tuple, layout))
    rows, cols = mask.shape
    return [(s, t) for s in range(rows) for t in range(cols) if mask[s, t] and (s, t) not in skv]


def _skv_sequence(channels, layout) -> list[tuple[np.ndarray, ...]]:
    return [tuple(ch[s, t] for ch in channels) for s, t in layout]


def _blank_channels(lf_shape, chroma_hw, rows, cols):
    h, w = lf_shape
    ch, cw = chroma_hw
    return (np.full((rows, cols, h, w), RESIDUAL_OFFSET, dtype=np.uint8),
            np.full((rows, cols, ch, cw), RESIDUAL_OFFSET, dtype=np.uint8),
            np.full((rows, cols, ch, cw), RESIDUAL_OFFSET, dtype=np.uint8))


def _with_skvs(decoded_skvs, layout, h, w, ch_hw, rows, cols):
    chans = _blank_channels((h, w), ch_hw, rows, cols)
    for (s, t), planes in zip(layout, decoded_skvs):
        for c, plane in zip(chans, planes):
            c[s, t] = plane
    return chans


def _add_residuals(approx, residuals, views, skv_layout, decoded_skvs):
    out = [a.copy() for a in approx]
    for (s, t), planes in zip(views, residuals):
        for c, a, r in zip(out, approx, planes):
            c[s, t] = np.clip(a[s, t].astype(np.int64) + r.astype(np.int64) - RESIDUAL_OFFSET,
                              0, 255).astype(np.uint8)
    for (s, t), planes in zip(skv_layout, decoded_skvs):
        for c, plane in zip(out, planes):
            c[s, t] = plane
    return out


def check_dictionary(dictionary: LfDictionary, patch_size: int) -> None:
    if dictionary.patch_size != patch_size:
        raise ValueError("dictionary patch size does not match the configuration")


def approximation_from(decoded_skvs, dmap: DisparityMap, dictionary: LfDictionary,
                       params: CoderParams, shape, threads: int = 1):
    rows, cols, h, w, ch_hw = shape
    chans = _with_skvs(decoded_skvs, params.layout.views, h, w, ch_hw, rows, cols)
    return approximate_lf(chans, dictionary, dmap, params, threads)


def _psnr_block(orig: LightField, recon: LightField) -> dict:
    from .evaluation import psnr_lf
    return psnr_lf(orig, recon)


def encode_lf(lf: LightField, dictionary: LfDictionary, config: EncoderConfig | None = None,
              threads: int = 1, approximation_cache: dict | None = None) -> EncodeResult:
    """Encode a light field.  ``approximation_cache`` (keyed internally by
    everything the approximation depends on) lets RD sweeps over ``q_res``
    reuse the disparity map and approximation."""
    config = config or EncoderConfig()
    params = config.coder_params
    check_dictionary(dictionary, config.patch_size)
    layout = params.layout.views
    for s, t in layout:
        if not lf.valid_mask[s, t]:
            raise ValueError(f"key view {(s, t)} is masked out")
    rows, cols = lf.angular_rows, lf.angular_cols
    ch_hw = lf.u.shape[2:]
    shape = (rows, cols, lf.height, lf.width, ch_hw)

    key = (config.q_skv, params, dictionary.content_hash, config.cost_window)
    cached = approximation_cache.get(key) if approximation_cache is not None else None
    if cached is None:
        grid = PatchGrid(lf.height, lf.width, config.patch_size, config.stride)
        dmap = estimate_disparity(lf, dictionary.levels, grid, config.cost_window, threads=threads)
        disp_payload = encode_disparity_map(dmap.levels, dictionary.n_levels)
        dec_levels, _ = decode_disparity_map(disp_payload)
        dmap_dec = DisparityMap(dec_levels, dmap.confidence, dictionary.levels)
        skv_payload = encode_sequence(_skv_sequence(lf.channels, layout), config.q_skv)
        decoded_skvs = [tuple(np.asarray(p, dtype=np.uint8) for p in v)
                        for v in decode_sequence(skv_payload)]
        approx = approximation_from(decoded_skvs, dmap_dec, dictionary, params, shape, threads)
        cached = (dmap_dec, disp_payload, skv_payload, decoded_skvs, approx)
        if approximation_cache is not None:
            approximation_cache[key] = cached
    dmap_dec, disp_payload, skv_payload, decoded_skvs, approx = cached

    views = residual_views(lf.valid_mask, layout)
    res_in = []
    for s, t in views:
        res_in.append(tuple(
            (o[s, t].astype(np.int64) - a[s, t].astype(np.int64) + RESIDUAL_OFFSET)
            for o, a in zip(lf.channels, approx)))
    res_payload = encode_sequence(res_in, config.q_res, serpentine_order(views), clamp=False)
    res_dec = decode_sequence(res_payload)

    header = bs.StreamHeader(rows, cols, lf.width, lf.height, config.patch_size, config.stride,
                             params.eps, params.max_coeffs, tuple(dictionary.levels), layout,
                             config.q_skv, config.q_res, dictionary.content_hash, lf.valid_mask)
    stream = bs.write_stream(header, {bs.SECTION_SKV: skv_payload,
                                      bs.SECTION_DISPARITY: disp_payload,
                                      bs.SECTION_RESIDUAL: res_payload})
    recon_ch = _add_residuals(approx, res_dec, views, layout, decoded_skvs)
    recon = LightField(*recon_ch, valid_mask=lf.valid_mask.copy())
    approx_lf = LightField(*[a.copy() for a in approx], valid_mask=lf.valid_mask.copy())
    return EncodeResult(stream, header, recon, approx_lf, dmap_dec,
                        _psnr_block(lf, recon), bs.bit_accounting(stream))


def decode_stream(data: bytes, dictionary: LfDictionary, threads: int = 1) -> DecodeResult:
    """Decode a ``.scskv`` stream.  Raises :class:`bitstream.HashMismatchError`
    before any decoding if the dictionary differs from the encoder's."""
    st = bs.read_stream(data, expected_hash=dictionary.content_hash)
    hdr = st.header
    for sid in (bs.SECTION_SKV, bs.SECTION_DISPARITY, bs.SECTION_RESIDUAL):
        if sid not in st.sections:
            raise bs.StreamError(f"missing section {bs.SECTION_NAMES[sid]}")
    if hdr.chroma_mode != bs.CHROMA_420:
        raise bs.StreamError(f"unsupported chroma mode {hdr.chroma_mode}")
    if tuple(np.float32(dictionary.levels)) != tuple(np.float32(hdr.levels)):
        raise bs.StreamError("disparity grid in the stream does not match the dictionary")
    check_dictionary(dictionary, hdr.patch_size)
    try:
        params = CoderParams(hdr.patch_size, hdr.stride, hdr.eps, hdr.max_coeffs,
                             SkvLayout(hdr.skv_layout))
        levels, n_levels = decode_disparity_map(st.sections[bs.SECTION_DISPARITY])
        if n_levels != dictionary.n_levels:
            raise bs.StreamError("disparity map alphabet does not match the dictionary")
        dmap = DisparityMap(levels, None, dictionary.levels)
        skvs = [tuple(np.asarray(p, dtype=np.uint8) for p in v)
                for v in decode_sequence(st.sections[bs.SECTION_SKV])]
        res = decode_sequence(st.sections[bs.SECTION_RESIDUAL])
    except (CodecError, ValueError) as exc:
        if isinstance(exc, bs.StreamError):
            raise
        raise bs.StreamError(f"corrupt section payload: {exc}") from exc

    h, w = hdr.height, hdr.width
    ch_hw = ((h + 1) // 2, (w + 1) // 2)
    if len(skvs) != len(hdr.skv_layout) or any(
            [p.shape for p in v] != [(h, w), ch_hw, ch_hw] for v in skvs):
        raise bs.StreamError("key view section does not match the header")
    views = residual_views(hdr.valid_mask, hdr.skv_layout)
    if len(res) != len(views) or any([p.shape for p in v] != [(h, w), ch_hw, ch_hw] for v in res):
        raise bs.StreamError("residual section does not match the header")
    grid = PatchGrid(h, w, hdr.patch_size, hdr.stride)
    if dmap.levels.shape != grid.shape:
        raise bs.StreamError("disparity map does not match the patch grid")

    shape = (hdr.angular_rows, hdr.angular_cols, h, w, ch_hw)
    approx = approximation_from(skvs, dmap, dictionary, params, shape, threads)
    out = _add_residuals(approx, res, views, hdr.skv_layout, skvs)
    return DecodeResult(LightField(*out, valid_mask=hdr.valid_mask.copy()),
                        LightField(*approx, valid_mask=hdr.valid_mask.copy()), hdr, dmap)


# ---------------------------------------------------------------------------
# baseline: every valid view through the intra codec at one q
# ---------------------------------------------------------------------------


@dataclass
class BaselineResult:
    payload: bytes
    reconstruction: LightField
    psnr: dict
    bpp: float


def encode_baseline(lf: LightField, q: int) -> BaselineResult:
    rows, cols = lf.angular_rows, lf.angular_cols
    views = [(s, t) for s in range(rows) for t in range(cols) if lf.valid_mask[s, t]]
    seq = [tuple(c[s, t] for c in lf.channels) for s, t in views]
    payload = encode_sequence(seq, q, serpentine_order(views))
    dec = decode_sequence(payload)
    chans = [c.copy() for c in lf.channels]
    for (s, t), planes in zip(views, dec):
        for c, p in zip(chans, planes):
            c[s, t] = p
    recon = LightField(*chans, valid_mask=lf.valid_mask.copy())
    bpp = 8.0 * len(payload) / (lf.width * lf.height * len(views))
    return BaselineResult(payload, recon, _psnr_block(lf, recon), bpp)
