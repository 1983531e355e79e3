import pytest
from hypothesis import given
from hypothesis import strategies as st

from lfsc.bitio import BitReader, BitstreamError, BitWriter


def bits_of(writer: BitWriter) -> str:
    n = writer.bit_length
    return "".join(f"{b:08b}" for b in writer.getvalue())[:n]


@pytest.mark.parametrize("value,code", [(0, "1"), (1, "010"), (2, "011"), (3, "00100"), (7, "0001000")])
def test_ue_codewords(value, code):
    w = BitWriter()
    w.write_ue(value)
    assert bits_of(w) == code


@pytest.mark.parametrize("value,code", [(0, "1"), (1, "010"), (-1, "011"), (2, "00100"), (-2, "00101")])
def test_se_codewords(value, code):
    w = BitWriter()
    w.write_se(value)
    assert bits_of(w) == code


@given(st.lists(st.tuples(st.sampled_from(["ue", "se", "raw"]), st.integers(0, 2 ** 40),
                          st.integers(0, 3))))
def test_mixed_round_trip(items):
    w = BitWriter()
    expected = []
    for kind, v, order in items:
        if kind == "ue":
            w.write_ue(v, order)
            expected.append(v)
        elif kind == "se":
            sv = v - 2 ** 39
            w.write_se(sv, order)
            expected.append(sv)
        else:
            w.write(v, 41)
            expected.append(v)
    r = BitReader(w.getvalue())
    got = []
    for kind, _, order in items:
        got.append(r.read_ue(order) if kind == "ue" else r.read_se(order) if kind == "se" else r.read(41))
    assert got == expected
    assert (r.bits_consumed + 7) // 8 == len(w.getvalue())


def test_reader_errors_on_exhaustion():
    with pytest.raises(BitstreamError):
        BitReader(b"\x00").read_ue()
    with pytest.raises(BitstreamError):
        BitReader(b"\xff").read(9)


def test_align_skips_to_byte():
    w = BitWriter()
    w.write(0b101, 3)
    r = BitReader(w.getvalue() + b"\xab")
    assert r.read(3) == 0b101
    r.align()
    assert r.read(8) == 0xAB
