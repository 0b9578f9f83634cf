import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowbit import codecs
from lowbit.codecs import Codec
from lowbit.errors import ArgumentError, FormatError

from .oracles import block_error, pack_bits, sherry_brute_force, sherry_values

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False, width=32)
scales = st.floats(0.0009765625, 128.0, allow_nan=False, width=32)


# -- Sherry -----------------------------------------------------------------


def test_sherry_example_block():
    w, s = [0.9, -0.1, 0.5, -0.7], 0.8
    code = codecs.sherry_quantize_block(w, s)
    assert code == 11
    assert codecs.sherry_fields(code) == (1, (1, 1, 0))
    assert sherry_brute_force(w, s)[0] == 11


def test_sherry_all_zero_block_tie_break():
    for s in (0.1, 1.0, 7.5):
        assert codecs.sherry_quantize_block([0, 0, 0, 0], s) == 7
        assert sherry_brute_force([0, 0, 0, 0], s)[0] == 7


def test_sherry_all_ones_block():
    assert codecs.sherry_quantize_block([1, 1, 1, 1], 1.0) == 7
    code, err = sherry_brute_force([1, 1, 1, 1], 1.0)
    assert code == 7 and err / 4 == 0.25


def test_sherry_dequantize_examples():
    np.testing.assert_allclose(codecs.sherry_dequantize_block(11, 0.8), [0.8, 0.0, 0.8, -0.8], rtol=1e-7)
    np.testing.assert_array_equal(codecs.sherry_dequantize_block(7, 1.0), [0, 1, 1, 1])


def test_sherry_table_matches_layout():
    for code in range(32):
        assert list(codecs.SHERRY_TABLE[code]) == sherry_values(code)
        vals = codecs.SHERRY_TABLE[code]
        assert (vals == 0).sum() == 1 and (np.abs(vals) == 1).sum() == 3


@pytest.mark.parametrize("s", [0.05, 0.8, 1.0, 3.25])
def test_sherry_round_trip_all_codes(s):
    for code in range(32):
        zero_idx, signs = codecs.sherry_fields(code)
        assert codecs.sherry_code(zero_idx, signs) == code
        assert codecs.sherry_quantize_block(codecs.sherry_dequantize_block(code, s), s) == code


def test_sherry_rejects_bad_input():
    with pytest.raises(ArgumentError):
        codecs.sherry_quantize_block([1, 2, 3, 4], 0.0)
    with pytest.raises(ArgumentError):
        codecs.sherry_quantize_block([1, 2, 3, float("nan")], 1.0)
    with pytest.raises(ArgumentError):
        codecs.sherry_quantize_block([1, 2, 3], 1.0)
    with pytest.raises(ArgumentError):
        codecs.sherry_dequantize_block(32, 1.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), scales)
def test_sherry_block_matches_brute_force(w, s):
    code = codecs.sherry_quantize_block(w, s)
    best_code, best_err = sherry_brute_force(w, s)
    assert block_error(w, code, s) == pytest.approx(best_err, rel=1e-12, abs=1e-12)


def test_sherry_pack_golden():
    assert codecs.sherry_pack([11]) == bytes([0x0B])
    assert codecs.sherry_pack([11, 20]) == bytes([0x8B, 0x02])
    assert codecs.sherry_pack([31] * 8) == bytes([0xFF] * 5)
    assert codecs.sherry_pack([]) == b""


def test_sherry_unpack_examples():
    assert list(codecs.sherry_unpack(bytes([0x0B]), 1)) == [11]
    assert list(codecs.sherry_unpack(b"", 0)) == []
    with pytest.raises(FormatError):
        codecs.sherry_unpack(bytes([0xFF]), 2)


@pytest.mark.parametrize("n", [0, 1, 7, 8, 9, 16, 100])
def test_sherry_pack_density(n):
    assert len(codecs.sherry_pack([5] * n)) == (5 * n + 7) // 8


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 31), max_size=64))
def test_sherry_pack_matches_bitstream_oracle(codes):
    packed = codecs.sherry_pack(codes)
    assert packed == pack_bits(codes, 5)
    assert list(codecs.sherry_unpack(packed, len(codes))) == codes


# -- SEQ --------------------------------------------------------------------


@pytest.mark.parametrize("w,s,code", [(0.7, 1, 2), (-3.2, 1, 0), (-1.0, 1, 1), (0.0, 1, 2), (1.0, 1, 3), (5, 1, 3)])
def test_seq_quantize_examples(w, s, code):
    assert codecs.seq_quantize(w, s) == code


def test_seq_levels():
    np.testing.assert_array_equal(codecs.seq_decode(np.arange(4), 1.0), [-1.5, -0.5, 0.5, 1.5])
    with pytest.raises(ArgumentError):
        codecs.seq_quantize(1.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(finite, scales)
def test_seq_is_nearest_level(w, s):
    code = codecs.seq_quantize(w, s)
    errs = [abs(w - (c - 1.5) * s) for c in range(4)]
    assert errs[code] <= min(errs) * (1 + 1e-9) + 1e-12


def test_seq_pack_golden():
    assert codecs.seq_pack([3, 2, 1, 0]) == bytes([0x1B])
    assert codecs.seq_pack([]) == b""
    assert list(codecs.seq_unpack(bytes([0x1B]), 4)) == [3, 2, 1, 0]
    with pytest.raises(FormatError):
        codecs.seq_unpack(b"\x00", 5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=64))
def test_seq_pack_round_trip(codes):
    packed = codecs.seq_pack(codes)
    assert packed == pack_bits(codes, 2)
    assert list(codecs.seq_unpack(packed, len(codes))) == codes


# -- INT --------------------------------------------------------------------


def test_int_quantize_examples():
    assert codecs.int_quantize(0.33, 0.1, 4) == 3
    assert codecs.int_store(3, 4) == 11
    assert codecs.int_quantize(-0.95, 0.1, 4) == -7
    assert float(codecs.int_decode(-7, 0.1)) == pytest.approx(-0.7)
    for bits in (4, 8):
        assert codecs.int_quantize(0.0, 0.5, bits) == 0
        assert codecs.int_store(0, bits) == 1 << (bits - 1)


def test_int_round_half_away_from_zero():
    assert codecs.int_quantize(2.5, 1.0, 8) == 3
    assert codecs.int_quantize(-2.5, 1.0, 8) == -3
    assert codecs.int_quantize(0.49999999999999994, 1.0, 8) == 0
    assert codecs.int_quantize(1e30, 1.0, 8) == 127
    assert codecs.int_quantize(-1e30, 1.0, 8) == -127


@settings(max_examples=300, deadline=None)
@given(finite, scales, st.sampled_from([4, 8]))
def test_int_error_bound_without_clipping(w, s, bits):
    qmax = (1 << (bits - 1)) - 1
    code = codecs.int_quantize(w, s, bits)
    assert -qmax <= code <= qmax
    if abs(w / s) <= qmax:
        assert abs(w - code * s) <= s / 2 * (1 + 1e-9)


def test_int_pack_layouts():
    # stored 9 and 7, low nibble first
    assert codecs.int_pack([1, -1], 4) == bytes([0x79])
    assert codecs.int_pack([1, -1, 127, -127], 8) == bytes([129, 127, 255, 1])
    assert codecs.int_pack([], 4) == b""
    with pytest.raises(ArgumentError):
        codecs.int_pack([-8], 4)


@pytest.mark.parametrize("bits", [4, 8])
def test_int_exhaustive_round_trip(bits):
    qmax = (1 << (bits - 1)) - 1
    codes = list(range(-qmax, qmax + 1))
    assert list(codecs.int_unpack(codecs.int_pack(codes, bits), len(codes), bits)) == codes


def test_int_unpack_rejects_excluded_code():
    with pytest.raises(FormatError):
        codecs.int_unpack(bytes([0x00]), 1, 8)
    with pytest.raises(FormatError):
        codecs.int_unpack(bytes([0x08]), 2, 4)
    with pytest.raises(FormatError):
        codecs.int_unpack(b"", 1, 4)


def test_codec_metadata():
    assert Codec.parse("sherry125") is Codec.SHERRY125
    assert Codec.parse("INT8") is Codec.INT8
    with pytest.raises(ArgumentError):
        Codec.parse("fp4")
    assert codecs.packed_row_bytes(Codec.SHERRY125, 128) == 20
    assert codecs.packed_row_bytes(Codec.SEQ2, 128) == 32
    assert codecs.packed_row_bytes(Codec.INT4, 128) == 64
    assert codecs.packed_row_bytes(Codec.INT8, 128) == 128
