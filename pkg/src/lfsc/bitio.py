"""MSB-first bit writer/reader with exponential-Golomb codes."""

from __future__ import annotations


class BitstreamError(ValueError):
    """Payload ended early or contained an invalid code."""


class BitWriter:
    __slots__ = ("_buf", "_acc", "_n")

    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._n = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits == 0:
            return
        self._acc = (self._acc << nbits) | (value & ((1 << nbits) - 1))
        self._n += nbits
        if self._n >= 32:
            full = self._n - self._n % 8
            rem = self._n - full
            chunk = self._acc >> rem
            self._buf += chunk.to_bytes(full // 8, "big")
            self._acc &= (1 << rem) - 1
            self._n = rem

    def write_bit(self, bit: int) -> None:
        self.write(bit & 1, 1)

    def write_ue(self, value: int, order: int = 0) -> None:
        """Unsigned exp-Golomb code of order ``order``."""
        if value < 0:
            raise ValueError("ue() of a negative value")
        v = value + (1 << order)
        nb = v.bit_length()
        # (nb - order - 1) leading zeros, then v in nb bits
        self.write(v, 2 * nb - order - 1)

    def write_se(self, value: int, order: int = 0) -> None:
        """Signed exp-Golomb: 0, 1, -1, 2, -2, ... -> 0, 1, 2, 3, 4, ..."""
        self.write_ue(2 * value - 1 if value > 0 else -2 * value, order)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._buf) + self._n

    def getvalue(self) -> bytes:
        """Flush (zero-padding to a byte boundary) and return the payload."""
        out = bytearray(self._buf)
        if self._n:
            pad = (-self._n) % 8
            out += (self._acc << pad).to_bytes((self._n + pad) // 8, "big")
        return bytes(out)


class BitReader:
    __slots__ = ("_data", "_pos", "_acc", "_n")

    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0  # next byte to load
        self._acc = 0
        self._n = 0

    def _fill(self, need: int) -> None:
        while self._n < need:
            if self._pos >= len(self._data):
                raise BitstreamError("unexpected end of payload")
            take = min(8, len(self._data) - self._pos)
            chunk = int.from_bytes(self._data[self._pos:self._pos + take], "big")
            self._acc = (self._acc << (8 * take)) | chunk
            self._n += 8 * take
            self._pos += take

    def read(self, nbits: int) -> int:
        if nbits == 0:
            return 0
        self._fill(nbits)
        self._n -= nbits
        value = self._acc >> self._n
        self._acc &= (1 << self._n) - 1
        return value

    def read_bit(self) -> int:
        return self.read(1)

    def read_ue(self, order: int = 0) -> int:
        zeros = 0
        while True:
            if self._n == 0:
                self._fill(1)
            if self._acc == 0:
                zeros += self._n
                self._n = 0
                if zeros > 64:
                    raise BitstreamError("exp-Golomb prefix too long")
                continue
            lead = self._n - self._acc.bit_length()
            zeros += lead
            self._n -= lead
            break
        if zeros > 64:
            raise BitstreamError("exp-Golomb prefix too long")
        v = self.read(zeros + order + 1)
        return v - (1 << order)

    def read_se(self, order: int = 0) -> int:
        k = self.read_ue(order)
        return (k + 1) // 2 if k & 1 else -(k // 2)

    @property
    def bits_consumed(self) -> int:
        return 8 * self._pos - self._n

    def align(self) -> None:
        self._n -= self._n % 8
        self._acc &= (1 << self._n) - 1
