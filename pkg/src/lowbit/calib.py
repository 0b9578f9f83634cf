"""Per-group scale calibration and whole-tensor quantization."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import codecs
from .codecs import Codec
from .core import ErrorMetrics, Matrix, compare
from .errors import ArgumentError, FormatError

#: Scale multipliers searched by MSE calibration: 0.20, 0.21, ..., 1.20.
#: Built from integers so that 1.0 is exact.
MSE_GRID = np.arange(20, 121, dtype=np.float64) / 100.0

_FLOAT32_TINY = float(np.finfo(np.float32).tiny)
# groups per vectorized chunk; bounds temporary memory on large tensors
_CHUNK_GROUPS = 1 << 14


class ScaleMode(enum.Enum):
    ABSMAX = "absmax"
    MSE_GRID = "mse"

    @classmethod
    def parse(cls, name: str) -> "ScaleMode":
        key = name.strip().lower()
        for m in cls:
            if key in (m.value, m.name.lower()):
                return m
        raise ArgumentError(f"unknown scale mode {name!r}")


@dataclass(frozen=True)
class QuantSpec:
    codec: Codec
    group_size: int = 128
    scale_mode: ScaleMode = ScaleMode.MSE_GRID

    def __post_init__(self):
        if self.codec is Codec.F32RAW or not isinstance(self.codec, Codec):
            raise ArgumentError(f"QuantSpec needs a quantizing codec, got {self.codec!r}")
        if self.group_size < 1:
            raise ArgumentError(f"group size must be positive, got {self.group_size}")
        mult = self.codec.group_multiple
        if self.group_size % mult:
            raise ArgumentError(
                f"{self.codec.name} needs group size divisible by {mult}, got {self.group_size}"
            )

    def check_cols(self, cols: int) -> None:
        if cols % self.group_size:
            raise ArgumentError(
                f"group size {self.group_size} does not divide column count {cols}"
            )

    @property
    def bits_per_weight(self) -> float:
        return self.codec.code_bits + 32.0 / self.group_size


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Packed codes plus one float32 scale per group, groups in row-major order."""

    spec: QuantSpec
    rows: int
    cols: int
    scales: np.ndarray
    codes: bytes

    def __post_init__(self):
        scales = np.array(self.scales, dtype=np.float32).reshape(-1)
        scales.setflags(write=False)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "codes", bytes(self.codes))

    @property
    def groups_per_row(self) -> int:
        return self.cols // self.spec.group_size

    @property
    def row_bytes(self) -> int:
        return codecs.packed_row_bytes(self.spec.codec, self.cols)

    @property
    def stored_bits(self) -> int:
        return 8 * len(self.codes) + 32 * self.scales.size

    def validate(self) -> None:
        """Raise :class:`FormatError` unless every length and scale is consistent."""
        if self.rows < 1 or self.cols < 1:
            raise FormatError(f"bad shape {self.rows}x{self.cols}")
        if self.cols % self.spec.group_size:
            raise FormatError(
                f"group size {self.spec.group_size} does not divide {self.cols} columns"
            )
        want_scales = self.rows * self.groups_per_row
        if self.scales.size != want_scales:
            raise FormatError(f"expected {want_scales} scales, got {self.scales.size}")
        want_codes = self.rows * self.row_bytes
        if len(self.codes) != want_codes:
            raise FormatError(f"expected {want_codes} code bytes, got {len(self.codes)}")
        if not (np.all(np.isfinite(self.scales)) and np.all(self.scales > 0)):
            raise FormatError("scales must be positive and finite")

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        # scale_mode is calibration history, not part of the stored tensor
        return (
            self.spec.codec == other.spec.codec
            and self.spec.group_size == other.spec.group_size
            and (self.rows, self.cols) == (other.rows, other.cols)
            and self.scales.tobytes() == other.scales.tobytes()
            and self.codes == other.codes
        )


# ---------------------------------------------------------------------------
# group-level primitives on (n_groups, group_size) arrays
# ---------------------------------------------------------------------------


def _encode(codec: Codec, groups: np.ndarray, scales: np.ndarray) -> np.ndarray:
    if codec is Codec.SHERRY125:
        n, g = groups.shape
        return codecs.sherry_encode(groups.reshape(-1, 4)).reshape(n, g // 4)
    if codec is Codec.SEQ2:
        return codecs.seq_encode(groups, scales[:, None])
    return codecs.int_encode(groups, scales[:, None], 4 if codec is Codec.INT4 else 8)


def _decode(codec: Codec, codes: np.ndarray, scales: np.ndarray) -> np.ndarray:
    if codec is Codec.SHERRY125:
        n, b = codes.shape
        per_block = np.repeat(scales, b)
        return codecs.sherry_decode(codes.reshape(-1), per_block).reshape(n, 4 * b)
    if codec is Codec.SEQ2:
        return codecs.seq_decode(codes, scales[:, None])
    return codecs.int_decode(codes, scales[:, None])


def _absmax_scales(groups: np.ndarray, codec: Codec) -> np.ndarray:
    peak = np.max(np.abs(groups.astype(np.float64)), axis=1)
    s = (peak / codec.level_max).astype(np.float32)
    s = np.where(peak == 0, np.float32(1.0), np.maximum(s, np.float32(_FLOAT32_TINY)))
    return s.astype(np.float32)


def _group_mse(groups: np.ndarray, deq: np.ndarray) -> np.ndarray:
    d = groups.astype(np.float64) - deq.astype(np.float64)
    return np.mean(d * d, axis=1)


def _mse_scales(groups: np.ndarray, codec: Codec) -> np.ndarray:
    n, g = groups.shape
    k = len(MSE_GRID)
    step = max(1, (1 << 21) // (k * g))
    out = np.empty(n, dtype=np.float32)
    for lo in range(0, n, step):
        chunk = groups[lo : lo + step]
        c = chunk.shape[0]
        peak = np.max(np.abs(chunk.astype(np.float64)), axis=1)
        cand = (MSE_GRID[:, None] * (peak / codec.level_max)[None, :]).astype(np.float32)
        cand = np.maximum(cand, np.float32(_FLOAT32_TINY))  # (k, c), increasing along k
        if codec is Codec.SHERRY125:
            # Sherry codes do not depend on the scale
            tern = codecs.SHERRY_TABLE[codecs.sherry_encode(chunk.reshape(-1, 4))]
            deq = tern.reshape(1, c, g).astype(np.float32) * cand[:, :, None]
        else:
            tiled = np.broadcast_to(chunk, (k, c, g)).reshape(k * c, g)
            flat_s = cand.reshape(-1)
            deq = _decode(codec, _encode(codec, tiled, flat_s), flat_s).reshape(k, c, g)
        d = chunk.astype(np.float64)[None] - deq.astype(np.float64)
        err = np.mean(d * d, axis=2)
        best = np.argmin(err, axis=0)  # first minimum: ties keep the smaller scale
        s = cand[best, np.arange(c)]
        out[lo : lo + c] = np.where(peak == 0, np.float32(1.0), s)
    return out


def _as_group(group) -> np.ndarray:
    g = np.asarray(group, dtype=np.float32).reshape(1, -1)
    if g.size == 0:
        raise ArgumentError("empty group")
    if not np.isfinite(g).all():
        raise ArgumentError("group values must be finite")
    return g


def scale_absmax(group, codec: Codec) -> float:
    """``max|w| / L_max``; an all-zero group gets 1.0."""
    return float(_absmax_scales(_as_group(group), Codec(codec))[0])


def scale_mse(group, codec: Codec) -> float:
    """Best of ``m * scale_absmax`` over :data:`MSE_GRID` by group MSE (ties: smaller)."""
    return float(_mse_scales(_as_group(group), Codec(codec))[0])


def group_mse(group, codec: Codec, s: float) -> float:
    """Reconstruction MSE of one group quantized at scale ``s``."""
    g = _as_group(group)
    codec = Codec(codec)
    sc = np.array([s], dtype=np.float32)
    return float(_group_mse(g, _decode(codec, _encode(codec, g, sc), sc))[0])


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------


def quantize_groups(
    w: np.ndarray, spec: QuantSpec, scales: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantize a 2-D array group by group.

    Returns ``(codes, scales, dequantized)`` with codes unpacked, one row per
    group, scales flat in row-major group order and the dequantized array in
    the input's shape.
    """
    rows, cols = w.shape
    spec.check_cols(cols)
    g = spec.group_size
    groups = np.ascontiguousarray(w, dtype=np.float32).reshape(-1, g)
    n = groups.shape[0]
    if scales is not None:
        scales = np.asarray(scales, dtype=np.float32).reshape(-1)
        if scales.size != n:
            raise ArgumentError(f"expected {n} scales, got {scales.size}")
        if not (np.all(scales > 0) and np.all(np.isfinite(scales))):
            raise ArgumentError("scales must be positive and finite")
    out_scales = np.empty(n, dtype=np.float32)
    code_width = g // 4 if spec.codec is Codec.SHERRY125 else g
    code_dtype = np.int8 if spec.codec in (Codec.INT4, Codec.INT8) else np.uint8
    out_codes = np.empty((n, code_width), dtype=code_dtype)
    deq = np.empty((n, g), dtype=np.float32)
    for lo in range(0, n, _CHUNK_GROUPS):
        chunk = groups[lo : lo + _CHUNK_GROUPS]
        if scales is not None:
            s = scales[lo : lo + _CHUNK_GROUPS]
        elif spec.scale_mode is ScaleMode.ABSMAX:
            s = _absmax_scales(chunk, spec.codec)
        else:
            s = _mse_scales(chunk, spec.codec)
        c = _encode(spec.codec, chunk, s)
        out_scales[lo : lo + len(chunk)] = s
        out_codes[lo : lo + len(chunk)] = c
        deq[lo : lo + len(chunk)] = _decode(spec.codec, c, s)
    return out_codes, out_scales, deq.reshape(rows, cols)


def _pack(codec: Codec, codes: np.ndarray) -> bytes:
    flat = codes.reshape(-1)
    if codec is Codec.SHERRY125:
        return codecs.sherry_pack(flat)
    if codec is Codec.SEQ2:
        return codecs.seq_pack(flat)
    return codecs.int_pack(flat, 4 if codec is Codec.INT4 else 8)


def unpack_codes(qt: QuantizedTensor) -> np.ndarray:
    """Codes of a validated tensor as ``(n_groups, width)``; Sherry width is blocks."""
    codec = qt.spec.codec
    n_weights = qt.rows * qt.cols
    if codec is Codec.SHERRY125:
        flat = codecs.sherry_unpack(qt.codes, n_weights // 4)
        return flat.reshape(-1, qt.spec.group_size // 4)
    if codec is Codec.SEQ2:
        flat = codecs.seq_unpack(qt.codes, n_weights)
    else:
        flat = codecs.int_unpack(qt.codes, n_weights, 4 if codec is Codec.INT4 else 8)
    return flat.reshape(-1, qt.spec.group_size)


def quantize_tensor(m: Matrix, spec: QuantSpec, scales: np.ndarray | None = None) -> QuantizedTensor:
    """Quantize ``m`` per ``spec``; ``scales`` overrides calibration when given."""
    codes, s, _ = quantize_groups(m.data, spec, scales)
    # Row packing is byte aligned under the group constraints, so the whole
    # tensor packs as one stream.
    return QuantizedTensor(spec, m.rows, m.cols, s, _pack(spec.codec, codes))


def dequantize_tensor(qt: QuantizedTensor) -> Matrix:
    qt.validate()
    deq = _decode(qt.spec.codec, unpack_codes(qt), qt.scales)
    return Matrix(qt.rows, qt.cols, deq.reshape(qt.rows, qt.cols))


def error_report(m: Matrix, qt: QuantizedTensor) -> ErrorMetrics:
    if m.shape != (qt.rows, qt.cols):
        raise ArgumentError(f"shape mismatch: {m.shape} vs {(qt.rows, qt.cols)}")
    return compare(m, dequantize_tensor(qt), qt.stored_bits)


def sherry_structure_ok(qt: QuantizedTensor) -> bool:
    """Every block holds exactly one zero and three values of magnitude ``s``."""
    deq = dequantize_tensor(qt).data.reshape(-1, qt.spec.group_size)
    s = qt.scales.reshape(-1, 1)
    blocks = deq.reshape(deq.shape[0], -1, 4)
    zeros = (blocks == 0).sum(axis=2)
    full = (np.abs(blocks) == s[:, :, None]).sum(axis=2)
    return bool(np.all(zeros == 1) and np.all(full == 3))
