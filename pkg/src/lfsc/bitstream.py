"""The ``.scskv`` container.

Layout (little-endian)::

    magic "SCSKV1"
    u16 angular rows, u16 angular cols, u16 width, u16 height
    u8 chroma mode (1 = 4:2:0), u8 patch size, u8 stride
    f32 eps, u8 max_coeffs
    u16 level count, level count x f32 disparity levels
    u8 key view count, count x (u8 row, u8 col)
    u8 q_skv, u8 q_res
    u64 dictionary content hash
    u16 evaluated view count (bpp denominator)
    valid-view bitmap, rows*cols bits, LSB first
    u8 section count, count x (u8 id, u32 offset, u32 length, u32 crc32)
    u32 crc32 of every header byte above
    section payloads

Section offsets are absolute.  Readers skip section ids they do not know.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SCSKV1"
CHROMA_420 = 1

SECTION_SKV = 1
SECTION_DISPARITY = 2
SECTION_RESIDUAL = 3
SECTION_NAMES = {SECTION_SKV: "skv", SECTION_DISPARITY: "disparity", SECTION_RESIDUAL: "residual"}

_DIMS = struct.Struct("<HHHHBBBfB")
_SECTION = struct.Struct("<BIII")


class StreamError(ValueError):
    """Malformed or corrupted stream."""


class HashMismatchError(StreamError):
    """Stream was produced with a different dictionary."""


@dataclass
class StreamHeader:
    angular_rows: int
    angular_cols: int
    width: int
    height: int
    patch_size: int = 8
    stride: int = 4
    eps: float = 5.0
    max_coeffs: int = 30
    levels: tuple = ()
    skv_layout: tuple = ()
    q_skv: int = 16
    q_res: int = 22
    dict_hash: int = 0
    valid_mask: np.ndarray | None = None
    eval_views: int = 0
    chroma_mode: int = CHROMA_420

    def __post_init__(self):
        self.eps = float(np.float32(self.eps))
        self.levels = tuple(float(np.float32(v)) for v in self.levels)
        self.skv_layout = tuple((int(s), int(t)) for s, t in self.skv_layout)
        if self.valid_mask is None:
            self.valid_mask = np.ones((self.angular_rows, self.angular_cols), dtype=bool)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.valid_mask.shape != (self.angular_rows, self.angular_cols):
            raise StreamError("valid mask does not match angular dimensions")
        if self.eval_views == 0:
            self.eval_views = int(self.valid_mask.sum())

    def __eq__(self, other):
        if not isinstance(other, StreamHeader):
            return NotImplemented
        a, b = dict(self.__dict__), dict(other.__dict__)
        ma, mb = a.pop("valid_mask"), b.pop("valid_mask")
        return a == b and np.array_equal(ma, mb)

    def pack_fields(self) -> bytes:
        out = [MAGIC, _DIMS.pack(self.angular_rows, self.angular_cols, self.width, self.height,
                                 self.chroma_mode, self.patch_size, self.stride, self.eps,
                                 self.max_coeffs)]
        out.append(struct.pack("<H", len(self.levels)))
        out.append(struct.pack(f"<{len(self.levels)}f", *self.levels))
        out.append(struct.pack("<B", len(self.skv_layout)))
        for s, t in self.skv_layout:
            out.append(struct.pack("<BB", s, t))
        out.append(struct.pack("<BBQH", self.q_skv, self.q_res, self.dict_hash, self.eval_views))
        out.append(np.packbits(self.valid_mask.ravel(), bitorder="little").tobytes())
        return b"".join(out)


@dataclass
class Stream:
    header: StreamHeader
    sections: dict = field(default_factory=dict)  # id -> bytes, in file order
    header_size: int = 0


def write_stream(header: StreamHeader, sections: dict) -> bytes:
    """Serialise ``header`` and ``{section id: payload}`` (written in id order)."""
    fields = header.pack_fields()
    ids = sorted(sections)
    head_size = len(fields) + 1 + _SECTION.size * len(ids) + 4
    table = [struct.pack("<B", len(ids))]
    offset = head_size
    for sid in ids:
        payload = bytes(sections[sid])
        table.append(_SECTION.pack(sid, offset, len(payload), zlib.crc32(payload)))
        offset += len(payload)
    head = fields + b"".join(table)
    head += struct.pack("<I", zlib.crc32(head))
    return head + b"".join(bytes(sections[sid]) for sid in ids)


class _Cursor:
    def __init__(self, data: bytes, pos: int = 0):
        self.data, self.pos = data, pos

    def take(self, st: struct.Struct | str):
        st = struct.Struct(st) if isinstance(st, str) else st
        if self.pos + st.size > len(self.data):
            raise StreamError("truncated header")
        vals = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StreamError("truncated header")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def read_stream(data: bytes, expected_hash: int | None = None) -> Stream:
    """Parse and validate a stream.

    The header CRC is checked before any field is trusted, the dictionary
    hash (when ``expected_hash`` is given) before any section is touched, and
    every section CRC before it is returned.
    """
    data = bytes(data)
    if data[:len(MAGIC)] != MAGIC:
        raise StreamError("bad magic")
    cur = _Cursor(data, len(MAGIC))
    rows, cols, w, h, chroma, patch, stride, eps, max_coeffs = cur.take(_DIMS)
    (n_levels,) = cur.take("<H")
    levels = cur.take(f"<{n_levels}f")
    (n_skv,) = cur.take("<B")
    layout = [cur.take("<BB") for _ in range(n_skv)]
    q_skv, q_res, dict_hash, eval_views = cur.take("<BBQH")
    mask_bytes = cur.raw((rows * cols + 7) // 8)
    (n_sec,) = cur.take("<B")
    table = [cur.take(_SECTION) for _ in range(n_sec)]
    crc_pos = cur.pos
    (stored_crc,) = cur.take("<I")
    if zlib.crc32(data[:crc_pos]) != stored_crc:
        raise StreamError("header CRC mismatch")
    if expected_hash is not None and dict_hash != expected_hash:
        raise HashMismatchError(
            f"stream needs dictionary {dict_hash:016x}, got {expected_hash:016x}")

    mask = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8), bitorder="little")
    mask = mask[:rows * cols].reshape(rows, cols).astype(bool)
    header = StreamHeader(rows, cols, w, h, patch, stride, eps, max_coeffs, tuple(levels),
                          tuple(layout), q_skv, q_res, dict_hash, mask, eval_views, chroma)

    head_size = cur.pos
    sections = {}
    spans = []
    for sid, off, length, crc in table:
        if off < head_size or off + length > len(data):
            raise StreamError(f"section {sid} lies outside the file (truncated stream?)")
        if sid in sections:
            raise StreamError(f"duplicate section {sid}")
        spans.append((off, off + length))
        payload = data[off:off + length]
        if zlib.crc32(payload) != crc:
            raise StreamError(f"section {sid} CRC mismatch")
        sections[sid] = payload
    spans.sort()
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise StreamError("overlapping sections")
    end = max([head_size] + [b for _, b in spans])
    if end != len(data):
        raise StreamError("trailing bytes after last section")
    return Stream(header, sections, head_size)


def bit_accounting(stream: bytes | Stream, total_size: int | None = None) -> dict:
    """Per-section byte counts and shares, plus bits per pixel.

    bpp divides total bits by ``width * height * eval_views`` (the valid-view
    count recorded in the header).
    """
    if not isinstance(stream, Stream):
        total_size = len(stream)
        stream = read_stream(stream)
    hdr = stream.header
    sizes = {"header": stream.header_size}
    for sid, payload in stream.sections.items():
        sizes[SECTION_NAMES.get(sid, f"section_{sid}")] = len(payload)
    total = sum(sizes.values()) if total_size is None else total_size
    pixels = hdr.width * hdr.height * hdr.eval_views
    return {
        "bytes": sizes,
        "share": {k: (v / total if total else 0.0) for k, v in sizes.items()},
        "total_bytes": total,
        "bpp": 8.0 * total / pixels,
    }
