"""Probability quantization and a byte-oriented range coder.

The coder keeps a 64-bit ``low``/``range`` pair and emits bytes LZMA-style: the
most recent byte is cached, runs of 0xFF are counted, and a carry out of ``low``
is added to the cache before it is written. Each symbol is coded against its
own 17-entry cumulative frequency table summing to ``TOTAL``.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import CorruptStreamError, InvalidProbabilityError, ShapeError

PRECISION = 16
TOTAL = 1 << PRECISION
ALPHABET = 16

_BITS = 64
_MASK = (1 << _BITS) - 1
_TOP = 1 << (_BITS - 8)
_LOW_KEEP = (1 << (_BITS - 8)) - 1
_CARRY_EDGE = 0xFF << (_BITS - 8)
_WINDOW_BYTES = _BITS // 8


def quantize_table(probs: ArrayLike) -> np.ndarray:
    """Rows of probabilities -> integer CDFs of shape (N, K+1) with total ``TOTAL``.

    Frequencies are floored, zeros are raised to 1, and the shortfall goes to the
    largest fractional remainders (lower symbol wins ties). An excess caused by
    the raised zeros is taken from the largest frequency.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] < 1:
        raise ShapeError(f"expected (N, K) probabilities, got shape {p.shape}")
    n, k = p.shape
    if k > TOTAL:
        raise ShapeError(f"alphabet of {k} symbols does not fit total {TOTAL}")
    if not np.all(np.isfinite(p)) or (p.size and float(p.min()) < 0.0):
        raise InvalidProbabilityError("probabilities must be finite and nonnegative")
    sums = p.sum(axis=1)
    if n and float(sums.min()) <= 0.0:
        raise InvalidProbabilityError("probability row sums to zero")

    scaled = p / sums[:, None] * TOTAL
    base = np.floor(scaled)
    freq = base.astype(np.int64)
    raised = freq < 1
    freq[raised] = 1
    remainder = np.where(raised, -1.0, scaled - base)
    diff = TOTAL - freq.sum(axis=1)

    order = np.argsort(-remainder, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(k)[None, :].repeat(n, axis=0), axis=1)
    freq += (rank < np.maximum(diff, 0)[:, None]).astype(np.int64)

    over = np.flatnonzero(diff < 0)
    if over.size:
        top = np.argmax(freq[over], axis=1)
        freq[over, top] += diff[over]

    cdf = np.zeros((n, k + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def quantize_probs(row: ArrayLike) -> np.ndarray:
    """Single 16-way (or K-way) row -> CDF of K+1 entries."""
    return quantize_table(np.asarray(row, dtype=np.float64).reshape(1, -1))[0]


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._done = False

    def _shift_low(self) -> None:
        if self.low < _CARRY_EDGE or self.low > _MASK:
            carry = self.low >> _BITS
            byte = self._cache
            while True:
                self._out.append((byte + carry) & 0xFF)
                byte = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (self.low >> (_BITS - 8)) & 0xFF
        self._cache_size += 1
        self.low = (self.low & _LOW_KEEP) << 8

    def encode(self, start: int, freq: int) -> None:
        """Narrow the interval to [start, start + freq) out of ``TOTAL``."""
        if freq < 1 or start < 0 or start + freq > TOTAL:
            raise ShapeError(f"symbol interval [{start}, {start + freq}) invalid for total {TOTAL}")
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_symbol(self, symbol: int, cdf: Sequence[int]) -> None:
        self.encode(cdf[symbol], cdf[symbol + 1] - cdf[symbol])

    def finish(self) -> bytes:
        """Flush with the fewest bytes that pin a value inside the final interval."""
        if self._done:
            return bytes(self._out[1:])
        for nbytes in range(_WINDOW_BYTES + 1):
            unit = 1 << (8 * (_WINDOW_BYTES - nbytes))
            value = -(-self.low // unit) * unit
            if value < self.low + self.range:
                break
        self.low = value
        for _ in range(nbytes + 1):
            self._shift_low()
        self._done = True
        # The first emitted byte is always zero: nothing can carry into it.
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self._data = bytes(data)
        self._pos = 0
        self._padded = 0
        self.range = _MASK
        self.code = 0
        for _ in range(_WINDOW_BYTES):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos < len(self._data):
            b = self._data[self._pos]
            self._pos += 1
            return b
        self._padded += 1
        if self._padded > _WINDOW_BYTES:
            raise CorruptStreamError("payload exhausted before all symbols were decoded")
        return 0

    def decode_symbol(self, cdf: Sequence[int]) -> int:
        r = self.range >> PRECISION
        value = self.code // r
        if value >= TOTAL:
            raise CorruptStreamError("range coder state outside the coding interval")
        symbol = bisect_right(cdf, value) - 1
        start, end = cdf[symbol], cdf[symbol + 1]
        self.code -= r * start
        self.range = r * (end - start)
        while self.range < _TOP:
            self.code = (self.code << 8) | self._next_byte()
            self.range <<= 8
        return symbol


def _as_cdf_rows(cdfs: ArrayLike, count: int) -> list[list[int]]:
    rows = np.asarray(cdfs, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[0] != count:
        raise ShapeError(f"expected {count} CDF rows, got shape {rows.shape}")
    return rows.tolist()


def encode_batch(encoder: RangeEncoder, symbols: ArrayLike, cdfs: ArrayLike) -> None:
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    rows = _as_cdf_rows(cdfs, sym.size)
    for s, cdf in zip(sym.tolist(), rows):
        encoder.encode_symbol(s, cdf)


def decode_batch(decoder: RangeDecoder, cdfs: ArrayLike, count: int) -> np.ndarray:
    rows = _as_cdf_rows(cdfs, count)
    return np.fromiter((decoder.decode_symbol(cdf) for cdf in rows), dtype=np.int64, count=count)


def encode_symbols(symbols: ArrayLike, cdfs: ArrayLike) -> bytes:
    enc = RangeEncoder()
    encode_batch(enc, symbols, cdfs)
    return enc.finish()


def decode_symbols(data: bytes, cdfs: ArrayLike, count: int) -> np.ndarray:
    return decode_batch(RangeDecoder(data), cdfs, count)


def ideal_bits(symbols: ArrayLike, cdfs: ArrayLike) -> float:
    """Sum of -log2 q(s) under the quantized tables."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    rows = np.asarray(cdfs, dtype=np.int64)
    idx = np.arange(sym.size)
    freq = rows[idx, sym + 1] - rows[idx, sym]
    return float(-np.log2(freq / TOTAL).sum())
