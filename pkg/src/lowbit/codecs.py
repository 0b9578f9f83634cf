"""Weight code families and their bit-exact packed layouts.

Sherry (1.25 bit)
    Every 4-weight block holds exactly one zero and three ``±s`` values.  A
    block is a 5-bit code ``(zero_idx << 3) | (b2 << 2) | (b1 << 1) | b0``
    where ``b0..b2`` are the signs (1 = +) of the surviving positions in
    ascending order.  Codes are written into an LSB-first bitstream, so
    8 blocks (32 weights) fill exactly 5 bytes.

SEQ (2 bit)
    Levels ``(code - 1.5) * s`` for ``code`` in 0..3, four codes per byte,
    first code in the low bit pair.

INT4 / INT8
    Symmetric integers in ``[-(2**(b-1) - 1), 2**(b-1) - 1]`` stored offset
    binary (``code + 2**(b-1)``); INT4 packs two per byte, low nibble first.
"""

from __future__ import annotations

import enum
import math
from typing import Iterable

import numpy as np

from .errors import ArgumentError, FormatError


class Codec(enum.IntEnum):
    """Codec ids double as the ``codec_id`` byte of the TQF format."""

    F32RAW = 0
    SHERRY125 = 1
    SEQ2 = 2
    INT4 = 3
    INT8 = 4

    @property
    def level_max(self) -> float:
        return _LEVEL_MAX[self]

    @property
    def code_bits(self) -> float:
        """Packed code bits per weight (scales excluded)."""
        return _CODE_BITS[self]

    @property
    def group_multiple(self) -> int:
        return _GROUP_MULTIPLE[self]

    @classmethod
    def parse(cls, name: str) -> "Codec":
        key = name.strip().upper().replace("-", "").replace("_", "")
        for c in cls:
            if c.name.replace("_", "") == key:
                return c
        raise ArgumentError(f"unknown codec {name!r}")


_LEVEL_MAX = {Codec.SHERRY125: 1.0, Codec.SEQ2: 1.5, Codec.INT4: 7.0, Codec.INT8: 127.0}
_CODE_BITS = {Codec.F32RAW: 32.0, Codec.SHERRY125: 1.25, Codec.SEQ2: 2.0, Codec.INT4: 4.0, Codec.INT8: 8.0}
_GROUP_MULTIPLE = {Codec.SHERRY125: 32, Codec.SEQ2: 4, Codec.INT4: 2, Codec.INT8: 1}


def packed_row_bytes(codec: Codec, cols: int) -> int:
    """Packed code bytes for one row of ``cols`` weights."""
    if codec is Codec.SHERRY125:
        return (5 * (cols // 4) + 7) // 8
    if codec is Codec.SEQ2:
        return (cols + 3) // 4
    if codec is Codec.INT4:
        return (cols + 1) // 2
    if codec is Codec.INT8:
        return cols
    if codec is Codec.F32RAW:
        return 4 * cols
    raise ArgumentError(f"unsupported codec {codec!r}")


def _check_scale(s) -> float:
    s = float(s)
    if not (s > 0 and math.isfinite(s)):
        raise ArgumentError(f"scale must be positive and finite, got {s}")
    return s


def _check_scales(s: np.ndarray) -> None:
    if not (np.all(s > 0) and np.all(np.isfinite(s))):
        raise ArgumentError("scales must be positive and finite")


# ---------------------------------------------------------------------------
# Sherry 1.25-bit
# ---------------------------------------------------------------------------

# Surviving positions (ascending) for each zero position.
_SURVIVORS = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]], dtype=np.intp)


def _build_sherry_table() -> np.ndarray:
    table = np.zeros((32, 4), dtype=np.int8)
    for code in range(32):
        zero_idx = code >> 3
        for k, pos in enumerate(_SURVIVORS[zero_idx]):
            table[code, pos] = 1 if (code >> k) & 1 else -1
    table.setflags(write=False)
    return table


#: Ternary values of every 5-bit code, shape (32, 4).
SHERRY_TABLE = _build_sherry_table()


def sherry_fields(code: int) -> tuple[int, tuple[int, int, int]]:
    """Split a code into ``(zero_idx, (b0, b1, b2))``."""
    code = int(code)
    if not 0 <= code <= 31:
        raise ArgumentError(f"Sherry code must be in 0..31, got {code}")
    return code >> 3, (code & 1, (code >> 1) & 1, (code >> 2) & 1)


def sherry_code(zero_idx: int, signs: tuple[int, int, int]) -> int:
    if not 0 <= zero_idx <= 3 or any(b not in (0, 1) for b in signs) or len(signs) != 3:
        raise ArgumentError(f"invalid Sherry fields {zero_idx}, {signs}")
    b0, b1, b2 = signs
    return (zero_idx << 3) | (b2 << 2) | (b1 << 1) | b0


def sherry_encode(blocks: np.ndarray) -> np.ndarray:
    """Codes for an ``(n, 4)`` array of blocks.

    The optimal code does not depend on the scale: zeroing position ``a``
    instead of ``b`` changes the squared error by ``2*s*(|w_a| - |w_b|)``, so
    the smallest magnitude is zeroed (lowest index on ties) and the rest keep
    their signs (zero counts as +).
    """
    blocks = np.asarray(blocks)
    if blocks.ndim != 2 or blocks.shape[1] != 4:
        raise ArgumentError(f"expected an (n, 4) block array, got {blocks.shape}")
    zero_idx = np.argmin(np.abs(blocks), axis=1)
    positive = blocks >= 0
    kept = np.take_along_axis(positive, _SURVIVORS[zero_idx], axis=1).astype(np.uint8)
    codes = (zero_idx.astype(np.uint8) << 3) | (kept[:, 2] << 2) | (kept[:, 1] << 1) | kept[:, 0]
    return codes.astype(np.uint8)


def sherry_decode(codes: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """``(n, 4)`` float32 values for ``n`` codes with per-block scales."""
    codes = np.asarray(codes)
    if codes.size and int(codes.max()) > 31:
        raise ArgumentError("Sherry codes must be in 0..31")
    scales = np.asarray(scales, dtype=np.float32).reshape(-1, 1)
    return SHERRY_TABLE[codes].astype(np.float32) * scales


def sherry_quantize_block(w, s: float) -> int:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != 4:
        raise ArgumentError(f"a Sherry block has 4 weights, got {w.size}")
    if not np.isfinite(w).all():
        raise ArgumentError("block weights must be finite")
    _check_scale(s)
    return int(sherry_encode(w.reshape(1, 4))[0])


def sherry_dequantize_block(code: int, s: float) -> np.ndarray:
    sherry_fields(code)
    s = _check_scale(s)
    return sherry_decode(np.array([code]), np.array([s]))[0]


def sherry_pack(codes: Iterable[int]) -> bytes:
    codes = np.asarray(list(codes) if not isinstance(codes, np.ndarray) else codes)
    if codes.size == 0:
        return b""
    codes = codes.astype(np.int64).reshape(-1)
    if codes.min() < 0 or codes.max() > 31:
        raise ArgumentError("Sherry codes must be in 0..31")
    bits = ((codes[:, None] >> np.arange(5)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def sherry_unpack(data: bytes, n_blocks: int) -> np.ndarray:
    need = (5 * n_blocks + 7) // 8
    if n_blocks < 0:
        raise ArgumentError(f"block count must be >= 0, got {n_blocks}")
    if len(data) < need:
        raise FormatError(f"need {need} bytes for {n_blocks} Sherry blocks, got {len(data)}", len(data))
    if n_blocks == 0:
        return np.zeros(0, dtype=np.uint8)
    buf = np.frombuffer(data, dtype=np.uint8, count=need)
    bits = np.unpackbits(buf, bitorder="little")[: 5 * n_blocks].reshape(n_blocks, 5)
    return (bits @ np.array([1, 2, 4, 8, 16], dtype=np.uint8)).astype(np.uint8)


# ---------------------------------------------------------------------------
# SEQ 2-bit
# ---------------------------------------------------------------------------

SEQ_LEVELS = np.array([-1.5, -0.5, 0.5, 1.5])


def seq_encode(w: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Nearest level; exact midpoints go to the higher code."""
    q = np.asarray(w, dtype=np.float64) / np.asarray(s, dtype=np.float64)
    return np.clip(np.floor(q) + 2, 0, 3).astype(np.uint8)


def seq_decode(codes: np.ndarray, s: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.size and int(codes.max()) > 3:
        raise ArgumentError("SEQ codes must be in 0..3")
    return (SEQ_LEVELS[codes] * np.asarray(s, dtype=np.float64)).astype(np.float32)


def seq_quantize(w: float, s: float) -> int:
    if not math.isfinite(w):
        raise ArgumentError("weight must be finite")
    _check_scale(s)
    return int(seq_encode(np.array(w), np.array(s)))


def seq_pack(codes: Iterable[int]) -> bytes:
    codes = np.asarray(list(codes) if not isinstance(codes, np.ndarray) else codes).astype(np.int64).reshape(-1)
    if codes.size == 0:
        return b""
    if codes.min() < 0 or codes.max() > 3:
        raise ArgumentError("SEQ codes must be in 0..3")
    padded = np.zeros(-(-codes.size // 4) * 4, dtype=np.uint8)
    padded[: codes.size] = codes
    q = padded.reshape(-1, 4)
    return (q[:, 0] | (q[:, 1] << 2) | (q[:, 2] << 4) | (q[:, 3] << 6)).astype(np.uint8).tobytes()


def seq_unpack(data: bytes, n: int) -> np.ndarray:
    need = (n + 3) // 4
    if n < 0:
        raise ArgumentError(f"code count must be >= 0, got {n}")
    if len(data) < need:
        raise FormatError(f"need {need} bytes for {n} SEQ codes, got {len(data)}", len(data))
    buf = np.frombuffer(data, dtype=np.uint8, count=need)
    out = (buf[:, None] >> np.array([0, 2, 4, 6], dtype=np.uint8)) & 3
    return out.reshape(-1)[:n].astype(np.uint8)


# ---------------------------------------------------------------------------
# Symmetric INT4 / INT8
# ---------------------------------------------------------------------------

_INT_CODECS = {4: Codec.INT4, 8: Codec.INT8}


def int_qmax(bits: int) -> int:
    if bits not in _INT_CODECS:
        raise ArgumentError(f"integer codes support 4 or 8 bits, got {bits}")
    return (1 << (bits - 1)) - 1


def round_half_away(q: np.ndarray) -> np.ndarray:
    a = np.abs(q)
    r = np.floor(a)
    r = r + ((a - r) >= 0.5)
    return np.copysign(r, q)


def int_encode(w: np.ndarray, s: np.ndarray, bits: int) -> np.ndarray:
    """Signed int8 codes in the symmetric range."""
    qmax = int_qmax(bits)
    q = np.asarray(w, dtype=np.float64) / np.asarray(s, dtype=np.float64)
    return np.clip(round_half_away(np.clip(q, -2.0 * qmax, 2.0 * qmax)), -qmax, qmax).astype(np.int8)


def int_decode(codes: np.ndarray, s: np.ndarray) -> np.ndarray:
    return (np.asarray(codes, dtype=np.float64) * np.asarray(s, dtype=np.float64)).astype(np.float32)


def int_quantize(w: float, s: float, bits: int) -> int:
    if not math.isfinite(w):
        raise ArgumentError("weight must be finite")
    _check_scale(s)
    return int(int_encode(np.array(w), np.array(s), bits))


def int_store(code: int, bits: int) -> int:
    """Offset-binary storage value of a signed code."""
    qmax = int_qmax(bits)
    if not -qmax <= code <= qmax:
        raise ArgumentError(f"code {code} outside symmetric {bits}-bit range")
    return code + (1 << (bits - 1))


def int_pack(codes: Iterable[int], bits: int) -> bytes:
    qmax = int_qmax(bits)
    codes = np.asarray(list(codes) if not isinstance(codes, np.ndarray) else codes).astype(np.int64).reshape(-1)
    if codes.size == 0:
        return b""
    if codes.min() < -qmax or codes.max() > qmax:
        raise ArgumentError(f"codes outside symmetric {bits}-bit range")
    stored = (codes + (1 << (bits - 1))).astype(np.uint8)
    if bits == 8:
        return stored.tobytes()
    if stored.size % 2:
        stored = np.append(stored, np.uint8(0))
    pairs = stored.reshape(-1, 2)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8).tobytes()


def int_unpack(data: bytes, n: int, bits: int) -> np.ndarray:
    """Signed codes; a stored value outside the symmetric range is a format error."""
    qmax = int_qmax(bits)
    need = n if bits == 8 else (n + 1) // 2
    if n < 0:
        raise ArgumentError(f"code count must be >= 0, got {n}")
    if len(data) < need:
        raise FormatError(f"need {need} bytes for {n} INT{bits} codes, got {len(data)}", len(data))
    buf = np.frombuffer(data, dtype=np.uint8, count=need)
    if bits == 8:
        stored = buf
    else:
        stored = np.stack([buf & 0x0F, buf >> 4], axis=1).reshape(-1)[:n]
    codes = stored.astype(np.int16) - (1 << (bits - 1))
    if codes.size and (codes.min() < -qmax):
        bad = int(np.argmax(codes < -qmax))
        raise FormatError(f"INT{bits} code {bad} uses the excluded most-negative value")
    return codes.astype(np.int8)
