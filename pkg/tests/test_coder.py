from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hintpc.core.coder import (
    TOTAL,
    RangeDecoder,
    RangeEncoder,
    decode_symbols,
    encode_symbols,
    ideal_bits,
    quantize_probs,
    quantize_table,
)
from hintpc.core.errors import CorruptStreamError, InvalidProbabilityError, ShapeError


def test_quantize_uniform():
    cdf = quantize_probs(np.full(16, 1 / 16))
    assert np.diff(cdf).tolist() == [4096] * 16
    assert cdf[0] == 0 and cdf[-1] == TOTAL


def test_quantize_one_hot_keeps_floor():
    p = np.zeros(16)
    p[5] = 1.0
    freq = np.diff(quantize_probs(p))
    assert freq[5] == TOTAL - 15
    assert freq.sum() == TOTAL
    assert sorted(freq.tolist())[:15] == [1] * 15


def test_quantize_rejects_bad_rows():
    with pytest.raises(InvalidProbabilityError):
        quantize_probs([0.5, np.nan])
    with pytest.raises(InvalidProbabilityError):
        quantize_probs([0.5, -0.1])
    with pytest.raises(InvalidProbabilityError):
        quantize_probs([0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=16, max_size=16).filter(lambda r: sum(r) > 1e-6))
def test_quantize_properties(row):
    freq = np.diff(quantize_probs(row))
    assert freq.sum() == TOTAL
    assert freq.min() >= 1
    p = np.asarray(row) / sum(row)
    assert np.abs(freq / TOTAL - p).sum() <= 2 * 16 / TOTAL + 1e-12


def test_uniform_symbols_cost_four_bits():
    rng = np.random.default_rng(0)
    sym = rng.integers(0, 16, 1000)
    cdfs = quantize_table(np.full((1000, 16), 1 / 16))
    data = encode_symbols(sym, cdfs)
    assert abs(8 * len(data) - 4000) <= 32
    assert decode_symbols(data, cdfs, 1000).tolist() == sym.tolist()


def test_empty_stream():
    assert encode_symbols([], np.zeros((0, 17), dtype=np.int64)) == b""
    assert decode_symbols(b"", np.zeros((0, 17), dtype=np.int64), 0).tolist() == []


def test_single_certain_symbol_is_cheap():
    p = np.zeros(16)
    p[0] = 1.0
    cdfs = quantize_table(np.tile(p, (50, 1)))
    data = encode_symbols(np.zeros(50, dtype=np.int64), cdfs)
    assert len(data) <= 2
    assert decode_symbols(data, cdfs, 50).tolist() == [0] * 50


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 400))
def test_round_trip_and_rate_bound(seed, n):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.full(16, 0.3), size=n)
    cdfs = quantize_table(probs)
    sym = np.array([rng.choice(16, p=p) for p in probs])
    data = encode_symbols(sym, cdfs)
    assert decode_symbols(data, cdfs, n).tolist() == sym.tolist()
    assert 8 * len(data) <= ideal_bits(sym, cdfs) + 16


def test_interleaved_tables_share_one_stream():
    enc = RangeEncoder()
    small = quantize_probs([0.9, 0.1])
    wide = quantize_probs(np.full(16, 1 / 16))
    plan = [(1, small), (7, wide), (0, small), (15, wide), (1, small)]
    for s, cdf in plan:
        enc.encode_symbol(s, cdf.tolist())
    dec = RangeDecoder(enc.finish())
    assert [dec.decode_symbol(cdf.tolist()) for _, cdf in plan] == [s for s, _ in plan]


def test_finish_is_idempotent():
    enc = RangeEncoder()
    enc.encode_symbol(3, quantize_probs(np.full(16, 1 / 16)).tolist())
    assert enc.finish() == enc.finish()


def test_decoder_rejects_overrun():
    cdfs = quantize_table(np.full((200, 16), 1 / 16))
    with pytest.raises(CorruptStreamError):
        decode_symbols(b"\x01", cdfs, 200)


def test_encoder_rejects_empty_interval():
    with pytest.raises(ShapeError):
        RangeEncoder().encode(10, 0)
