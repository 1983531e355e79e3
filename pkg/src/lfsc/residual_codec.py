"""Intra-only block transform codec for key views and residual views.

Normative path (all integer arithmetic):

* planes are edge-padded to multiples of 8 and level-shifted by -128;
* each 8x8 block goes through a fixed-point orthonormal DCT whose output
  carries ``COEF_FRAC_BITS`` fractional bits;
* coefficients are quantised uniformly with step ``2 ** ((q - 4) / 6)``
  (held as a Q16 integer), round-to-nearest;
* blocks are zigzag scanned and entropy coded with exp-Golomb codes.

Plane payload grammar (MSB first, order-0 exp-Golomb throughout)::

    plane      := empty_flag:u(1) [ blocks ]      # byte aligned when stored alone
    blocks     := { skip_run:ue  [ block ] }      # until all blocks consumed
    block      := dc_delta:se  n_ac:ue  { ac_run:ue  mag_minus1:ue  sign:u(1) } * n_ac

``skip_run`` counts blocks (raster order) whose DC equals the previous
block's DC and whose AC coefficients are all zero; the run that follows the
last coded block is written only when it is non-zero.  ``dc_delta`` is the
DC level minus the previous block's DC level (0 before the first block).
``ac_run`` is the number of zero coefficients skipped in zigzag order
before the next non-zero one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bitio import BitReader, BitstreamError, BitWriter

BLOCK = 8
COEF_FRAC_BITS = 2
_MAT_BITS = 18
Q_MIN, Q_MAX = 1, 51

# round(2 ** (r / 6) * 2 ** 16), r = 0..5
_STEP_BASE_Q16 = (65536, 73562, 82570, 92682, 104032, 116772)


class CodecError(ValueError):
    """Corrupt or inconsistent coded payload."""


def _dct_matrix() -> np.ndarray:
    n = np.arange(BLOCK)
    k = n[:, None]
    c = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2 * BLOCK))
    c *= np.where(k == 0, np.sqrt(1.0 / BLOCK), np.sqrt(2.0 / BLOCK))
    return c


DCT_MATRIX = _dct_matrix()
_DCT_INT = np.rint(DCT_MATRIX * (1 << _MAT_BITS)).astype(np.int64)


def _zigzag_order(n: int = BLOCK) -> np.ndarray:
    idx = sorted(((i, j) for i in range(n) for j in range(n)),
                 key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]))
    return np.array([i * n + j for i, j in idx])


ZIGZAG = _zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)


def dct8_forward(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DCT-II (real arithmetic)."""
    return DCT_MATRIX @ np.asarray(block, dtype=np.float64) @ DCT_MATRIX.T


def dct8_inverse(coeffs: np.ndarray) -> np.ndarray:
    return DCT_MATRIX.T @ np.asarray(coeffs, dtype=np.float64) @ DCT_MATRIX


def _shift_round(x: np.ndarray, bits: int) -> np.ndarray:
    return (x + (1 << (bits - 1))) >> bits


def int_dct8_forward(blocks: np.ndarray) -> np.ndarray:
    """Fixed-point forward DCT of integer blocks ``(..., 8, 8)``.

    Output is the orthonormal transform scaled by ``2 ** COEF_FRAC_BITS``.
    """
    b = np.asarray(blocks, dtype=np.int64)
    y = np.matmul(np.matmul(_DCT_INT, b), _DCT_INT.T)
    return _shift_round(y, 2 * _MAT_BITS - COEF_FRAC_BITS)


def int_dct8_inverse(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.int64)
    x = np.matmul(np.matmul(_DCT_INT.T, c), _DCT_INT)
    return _shift_round(x, 2 * _MAT_BITS + COEF_FRAC_BITS)


def step_q16(q: int) -> int:
    """Quantiser step ``2 ** ((q - 4) / 6)`` in Q16 fixed point."""
    if not Q_MIN <= q <= Q_MAX:
        raise ValueError(f"q must be in {Q_MIN}..{Q_MAX}, got {q}")
    r = q - 4
    base = _STEP_BASE_Q16[r % 6]
    e = r // 6
    return base << e if e >= 0 else base >> -e


def quant_step(q: int) -> float:
    return step_q16(q) / 65536.0


@dataclass(frozen=True)
class QuantConfig:
    q_skv: int = 16
    q_res: int = 22

    def __post_init__(self):
        step_q16(self.q_skv)
        step_q16(self.q_res)


def quantize(coeffs: np.ndarray, q: int) -> np.ndarray:
    div = step_q16(q) << COEF_FRAC_BITS
    c = np.asarray(coeffs, dtype=np.int64)
    mag = (np.abs(c) * 65536 + div // 2) // div
    return np.where(c < 0, -mag, mag)


def dequantize(levels: np.ndarray, q: int) -> np.ndarray:
    mul = step_q16(q) << COEF_FRAC_BITS
    lv = np.asarray(levels, dtype=np.int64)
    mag = (np.abs(lv) * mul + 32768) >> 16
    return np.where(lv < 0, -mag, mag)


# ---------------------------------------------------------------------------
# plane coding
# ---------------------------------------------------------------------------


def _padded_dims(h: int, w: int) -> tuple[int, int]:
    return -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph, pw = _padded_dims(h, w)
    p = np.pad(plane, ((0, ph - h), (0, pw - w)), mode="edge")
    return p.reshape(ph // BLOCK, BLOCK, pw // BLOCK, BLOCK).swapaxes(1, 2).reshape(-1, BLOCK, BLOCK)


def _from_blocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    ph, pw = _padded_dims(h, w)
    img = blocks.reshape(ph // BLOCK, pw // BLOCK, BLOCK, BLOCK).swapaxes(1, 2).reshape(ph, pw)
    return img[:h, :w]


def plane_levels(plane: np.ndarray, q: int) -> np.ndarray:
    """Quantised zigzag levels, shape ``(n_blocks, 64)``."""
    blocks = _to_blocks(np.asarray(plane, dtype=np.int64) - 128)
    coeffs = int_dct8_forward(blocks).reshape(-1, BLOCK * BLOCK)
    return quantize(coeffs, q)[:, ZIGZAG]


def reconstruct_levels(levels: np.ndarray, q: int, h: int, w: int, clamp: bool) -> np.ndarray:
    coeffs = dequantize(levels[:, UNZIGZAG], q).reshape(-1, BLOCK, BLOCK)
    img = _from_blocks(int_dct8_inverse(coeffs), h, w) + 128
    if clamp:
        return np.clip(img, 0, 255).astype(np.uint8)
    return img.astype(np.int16)


def _write_levels(bw: BitWriter, levels: np.ndarray) -> None:
    n_blocks = levels.shape[0]
    dc = levels[:, 0].tolist()
    ac_rows, ac_pos = np.nonzero(levels[:, 1:])
    ac_vals = levels[:, 1:][ac_rows, ac_pos].tolist()
    ac_rows = ac_rows.tolist()
    ac_pos = ac_pos.tolist()
    if not ac_rows and not any(dc):
        bw.write(1, 1)
        return
    bw.write(0, 1)
    k = 0
    n_ac = len(ac_rows)
    prev_dc = 0
    run = 0
    for b in range(n_blocks):
        start = k
        while k < n_ac and ac_rows[k] == b:
            k += 1
        delta = dc[b] - prev_dc
        if delta == 0 and k == start:
            run += 1
            continue
        bw.write_ue(run)
        run = 0
        bw.write_se(delta)
        prev_dc = dc[b]
        bw.write_ue(k - start)
        last = -1
        for i in range(start, k):
            pos = ac_pos[i]
            bw.write_ue(pos - last - 1)
            last = pos
            v = ac_vals[i]
            if v > 0:
                bw.write_ue(v - 1)
                bw.write(0, 1)
            else:
                bw.write_ue(-v - 1)
                bw.write(1, 1)
    if run:
        bw.write_ue(run)


def _read_levels(br: BitReader, n_blocks: int) -> np.ndarray:
    levels = np.zeros((n_blocks, BLOCK * BLOCK), dtype=np.int64)
    if br.read(1):
        return levels
    dc = 0
    b = 0
    while b < n_blocks:
        run = br.read_ue()
        if run > n_blocks - b:
            raise CodecError("skip run overruns the plane")
        if run:
            levels[b:b + run, 0] = dc
            b += run
            if b == n_blocks:
                break
        dc += br.read_se()
        levels[b, 0] = dc
        n_ac = br.read_ue()
        if n_ac > BLOCK * BLOCK - 1:
            raise CodecError("too many AC coefficients in block")
        pos = 0
        for _ in range(n_ac):
            pos += br.read_ue()
            if pos >= BLOCK * BLOCK - 1:
                raise CodecError("AC run past end of block")
            mag = br.read_ue() + 1
            levels[b, 1 + pos] = -mag if br.read(1) else mag
            pos += 1
        b += 1
    return levels


@dataclass(frozen=True)
class CodedPlane:
    """Self-contained coded plane: ``u16 width, u16 height, u8 q, u8 flags`` + payload."""

    width: int
    height: int
    q: int
    clamp: bool
    payload: bytes

    HEADER = struct.Struct("<HHBB")

    def to_bytes(self) -> bytes:
        return self.HEADER.pack(self.width, self.height, self.q, int(self.clamp)) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodedPlane":
        if len(data) < cls.HEADER.size:
            raise CodecError("truncated plane header")
        w, h, q, flags = cls.HEADER.unpack_from(data)
        if flags & ~1 or not Q_MIN <= q <= Q_MAX or w == 0 or h == 0:
            raise CodecError("invalid plane header")
        return cls(w, h, q, bool(flags & 1), bytes(data[cls.HEADER.size:]))

    def __len__(self) -> int:
        return self.HEADER.size + len(self.payload)


def _check_plane(plane: np.ndarray, clamp: bool) -> np.ndarray:
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.size == 0:
        raise ValueError("plane must be a non-empty 2D array")
    lo, hi = (0, 255) if clamp else (-128, 383)
    if plane.min() < lo or plane.max() > hi:
        raise ValueError(f"plane values outside [{lo}, {hi}]")
    return plane


def encode_plane(plane: np.ndarray, q: int, clamp: bool = True) -> CodedPlane:
    """Code one plane.  ``clamp=True`` for 8-bit images; residual planes are
    passed as ``residual + 128`` with ``clamp=False``."""
    plane = _check_plane(plane, clamp)
    bw = BitWriter()
    _write_levels(bw, plane_levels(plane, q))
    h, w = plane.shape
    return CodedPlane(w, h, q, clamp, bw.getvalue())


def _n_blocks(h: int, w: int) -> int:
    ph, pw = _padded_dims(h, w)
    return (ph // BLOCK) * (pw // BLOCK)


def decode_plane(coded: CodedPlane | bytes) -> np.ndarray:
    if isinstance(coded, (bytes, bytearray)):
        coded = CodedPlane.from_bytes(coded)
    br = BitReader(coded.payload)
    try:
        levels = _read_levels(br, _n_blocks(coded.height, coded.width))
    except BitstreamError as exc:
        raise CodecError(str(exc)) from exc
    if (br.bits_consumed + 7) // 8 != len(coded.payload):
        raise CodecError("trailing data after plane payload")
    return reconstruct_levels(levels, coded.q, coded.height, coded.width, coded.clamp)


def roundtrip_plane(plane: np.ndarray, q: int, clamp: bool = True) -> np.ndarray:
    """Decoded plane without the entropy stage (identical to decode(encode()))."""
    plane = _check_plane(plane, clamp)
    h, w = plane.shape
    return reconstruct_levels(plane_levels(plane, q), q, h, w, clamp)


# ---------------------------------------------------------------------------
# view sequences
# ---------------------------------------------------------------------------

_SEQ_HEADER = struct.Struct("<HBBB")


def encode_sequence(views: Sequence[Sequence[np.ndarray]], q: int, order: Sequence[int] | None = None,
                    clamp: bool = True) -> bytes:
    """Intra-code a list of views (each a tuple of planes) in ``order``.

    ``order[i]`` is the input index of the i-th coded view.  Layout::

        u16 count, u8 planes_per_view, u8 q, u8 flags,
        planes_per_view x (u16 width, u16 height),
        bit stream: order table se(order[i] - order[i-1] - 1), then every
        plane in coding order, packed back to back, byte aligned at the end.

    An all-zero plane costs a single bit.
    """
    views = [tuple(v) if isinstance(v, (tuple, list)) else (v,) for v in views]
    n = len(views)
    order = list(range(n)) if order is None else [int(i) for i in order]
    if sorted(order) != list(range(n)):
        raise ValueError("order must be a permutation of the view indices")
    if n > 0xFFFF:
        raise ValueError("too many views")
    ppv = len(views[0]) if views else 0
    shapes = [np.shape(p) for p in views[0]] if views else []
    for v in views:
        if len(v) != ppv or [np.shape(p) for p in v] != shapes:
            raise ValueError("all views must have the same plane layout")
    head = [_SEQ_HEADER.pack(n, ppv, q, int(clamp))]
    for h, w in shapes:
        head.append(struct.pack("<HH", w, h))
    bw = BitWriter()
    prev = -1
    for i in order:
        bw.write_se(i - prev - 1)
        prev = i
    for i in order:
        for plane in views[i]:
            _write_levels(bw, plane_levels(_check_plane(plane, clamp), q))
    return b"".join(head) + bw.getvalue()


def _parse_sequence_header(payload: bytes):
    if len(payload) < _SEQ_HEADER.size:
        raise CodecError("truncated sequence header")
    n, ppv, q, flags = _SEQ_HEADER.unpack_from(payload)
    if flags & ~1 or not Q_MIN <= q <= Q_MAX or (n and ppv == 0):
        raise CodecError("invalid sequence header")
    pos = _SEQ_HEADER.size
    shapes = []
    for _ in range(ppv):
        if pos + 4 > len(payload):
            raise CodecError("truncated sequence header")
        w, h = struct.unpack_from("<HH", payload, pos)
        if w == 0 or h == 0:
            raise CodecError("invalid plane dimensions")
        shapes.append((h, w))
        pos += 4
    return n, ppv, q, bool(flags & 1), shapes, pos


def decode_sequence(payload: bytes) -> list[tuple[np.ndarray, ...]]:
    """Inverse of :func:`encode_sequence`; views come back in input order."""
    n, ppv, q, clamp, shapes, pos = _parse_sequence_header(payload)
    br = BitReader(payload[pos:])
    try:
        order = []
        prev = -1
        for _ in range(n):
            prev = prev + 1 + br.read_se()
            order.append(prev)
        if sorted(order) != list(range(n)):
            raise CodecError("view order table is not a permutation")
        out: list = [None] * n
        for i in order:
            planes = []
            for h, w in shapes:
                levels = _read_levels(br, _n_blocks(h, w))
                planes.append(reconstruct_levels(levels, q, h, w, clamp))
            out[i] = tuple(planes)
    except BitstreamError as exc:
        raise CodecError(str(exc)) from exc
    if (br.bits_consumed + 7) // 8 != len(payload) - pos:
        raise CodecError("trailing data after sequence payload")
    return out


def sequence_order(payload: bytes) -> list[int]:
    n, _, _, _, _, pos = _parse_sequence_header(payload)
    br = BitReader(payload[pos:])
    order, prev = [], -1
    for _ in range(n):
        prev = prev + 1 + br.read_se()
        order.append(prev)
    return order


# ---------------------------------------------------------------------------
# disparity level map (lossless)
# ---------------------------------------------------------------------------

_DMAP_HEADER = struct.Struct("<HHB")


def _median3(a: int, b: int, c: int) -> int:
    return max(min(a, b), min(max(a, b), c))


def encode_disparity_map(levels: np.ndarray, n_levels: int) -> bytes:
    """Median(left, top, top-left) prediction + signed exp-Golomb residuals."""
    lv = np.asarray(levels)
    if lv.ndim != 2:
        raise ValueError("level map must be 2D")
    if lv.size and (lv.min() < 0 or lv.max() >= n_levels):
        raise ValueError("level index outside the disparity alphabet")
    rows, cols = lv.shape
    grid = lv.astype(np.int64).tolist()
    bw = BitWriter()
    for r in range(rows):
        for c in range(cols):
            bw.write_se(grid[r][c] - _predict(grid, r, c))
    return _DMAP_HEADER.pack(rows, cols, n_levels) + bw.getvalue()


def _predict(grid, r: int, c: int) -> int:
    if r == 0 and c == 0:
        return 0
    if r == 0:
        return grid[r][c - 1]
    if c == 0:
        return grid[r - 1][c]
    return _median3(grid[r][c - 1], grid[r - 1][c], grid[r - 1][c - 1])


def decode_disparity_map(payload: bytes) -> tuple[np.ndarray, int]:
    if len(payload) < _DMAP_HEADER.size:
        raise CodecError("truncated disparity map header")
    rows, cols, n_levels = _DMAP_HEADER.unpack_from(payload)
    if n_levels == 0:
        raise CodecError("empty disparity alphabet")
    br = BitReader(payload[_DMAP_HEADER.size:])
    grid = [[0] * cols for _ in range(rows)]
    try:
        for r in range(rows):
            for c in range(cols):
                v = _predict(grid, r, c) + br.read_se()
                if not 0 <= v < n_levels:
                    raise CodecError("disparity level outside alphabet")
                grid[r][c] = v
    except BitstreamError as exc:
        raise CodecError(str(exc)) from exc
    if (br.bits_consumed + 7) // 8 != len(payload) - _DMAP_HEADER.size:
        raise CodecError("trailing data after disparity map")
    return np.array(grid, dtype=np.int64).reshape(rows, cols), n_levels
