"""RWF (dense float32) and TQF (quantized) checkpoint formats.

Both are little-endian with no padding.  A file is::

    magic[4] ("RWF1" | "TQF1")  u32 version (=1)  u32 tensor_count  tensor*

RWF tensor::

    u16 name_len, name (UTF-8), u32 rows, u32 cols, rows*cols f32

TQF tensor::

    u16 name_len, name, u8 codec_id, u8 scale_dtype (0 = f32), u16 reserved (0),
    u32 rows, u32 cols, u32 group_size (0 for F32RAW),
    u64 scales_len_bytes, u64 codes_len_bytes, scales, codes

F32RAW tensors in TQF carry their raw float32 values as ``codes``.  Readers
check every length against the declared shape and codec before touching the
payload, so malformed input only ever raises :class:`FormatError`.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Mapping, Union

import numpy as np

from .calib import QuantizedTensor, QuantSpec, ScaleMode
from .codecs import Codec, packed_row_bytes
from .core import Matrix
from .errors import ArgumentError, FormatError

Tensor = Union[Matrix, QuantizedTensor]

RWF_MAGIC = b"RWF1"
TQF_MAGIC = b"TQF1"
VERSION = 1
MAX_NAME_BYTES = 0xFFFF

_HEADER = struct.Struct("<4sII")
_TQF_META = struct.Struct("<BBHIIIQQ")  # after the name


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated: need {n} bytes for {what}, {len(self.buf) - self.pos} left", self.pos
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct, what: str) -> tuple:
        return st.unpack(self.take(st.size, what))

    def name(self) -> str:
        (n,) = self.unpack(struct.Struct("<H"), "name length")
        at = self.pos
        raw = self.take(n, "name")
        try:
            return bytes(raw).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", at) from None


def _read_header(r: _Reader, magic: bytes) -> int:
    got, version, count = r.unpack(_HEADER, "header")
    if got != magic:
        raise FormatError(f"bad magic {bytes(got)!r}, expected {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    return count


def _name_bytes(name: str) -> bytes:
    if not isinstance(name, str):
        raise ArgumentError(f"tensor names must be strings, got {type(name).__name__}")
    raw = name.encode("utf-8")
    if len(raw) > MAX_NAME_BYTES:
        raise ArgumentError(f"tensor name longer than {MAX_NAME_BYTES} bytes")
    return raw


def _check_dims(rows: int, cols: int) -> None:
    if not (0 < rows < 2**32 and 0 < cols < 2**32):
        raise ArgumentError(f"dimensions {rows}x{cols} do not fit the format")


def _float_payload(m: Matrix) -> bytes:
    return m.data.astype("<f4").tobytes()


def _matrix_from(raw: memoryview, rows: int, cols: int, name: str, at: int) -> Matrix:
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(rows, cols)
    if not np.isfinite(arr).all():
        raise FormatError(f"tensor {name!r}: non-finite value in data", at)
    return Matrix(rows, cols, arr)


# ---------------------------------------------------------------------------
# RWF
# ---------------------------------------------------------------------------


def write_rwf(tensors: Mapping[str, Matrix]) -> bytes:
    out = bytearray(_HEADER.pack(RWF_MAGIC, VERSION, len(tensors)))
    for name, m in tensors.items():
        if not isinstance(m, Matrix):
            raise ArgumentError(f"RWF stores dense matrices only; {name!r} is {type(m).__name__}")
        raw = _name_bytes(name)
        _check_dims(m.rows, m.cols)
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<II", m.rows, m.cols)
        out += _float_payload(m)
    return bytes(out)


def read_rwf(data: bytes) -> dict[str, Matrix]:
    r = _Reader(data)
    count = _read_header(r, RWF_MAGIC)
    tensors: dict[str, Matrix] = {}
    for _ in range(count):
        at = r.pos
        name = r.name()
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", at)
        dim_at = r.pos
        rows, cols = r.unpack(struct.Struct("<II"), f"shape of {name!r}")
        if rows == 0 or cols == 0:
            raise FormatError(f"tensor {name!r}: empty shape {rows}x{cols}", dim_at)
        data_at = r.pos
        raw = r.take(4 * rows * cols, f"data of {name!r}")
        tensors[name] = _matrix_from(raw, rows, cols, name, data_at)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes", r.pos)
    return tensors


# ---------------------------------------------------------------------------
# TQF
# ---------------------------------------------------------------------------


def write_tqf(tensors: Mapping[str, Tensor]) -> bytes:
    out = bytearray(_HEADER.pack(TQF_MAGIC, VERSION, len(tensors)))
    for name, t in tensors.items():
        raw = _name_bytes(name)
        out += struct.pack("<H", len(raw)) + raw
        if isinstance(t, Matrix):
            _check_dims(t.rows, t.cols)
            codes = _float_payload(t)
            out += _TQF_META.pack(Codec.F32RAW, 0, 0, t.rows, t.cols, 0, 0, len(codes))
            out += codes
        elif isinstance(t, QuantizedTensor):
            t.validate()
            _check_dims(t.rows, t.cols)
            scales = t.scales.astype("<f4").tobytes()
            out += _TQF_META.pack(
                t.spec.codec, 0, 0, t.rows, t.cols, t.spec.group_size, len(scales), len(t.codes)
            )
            out += scales
            out += t.codes
        else:
            raise ArgumentError(f"cannot store {type(t).__name__} as {name!r}")
    return bytes(out)


def _bad(name: str, field: str, msg: str, at: int) -> FormatError:
    return FormatError(f"tensor {name!r}, field {field}: {msg}", at)


def _check_int_codes(codes: memoryview, codec: Codec, name: str, at: int) -> None:
    buf = np.frombuffer(codes, dtype=np.uint8)
    if codec is Codec.INT8:
        bad = buf == 0
    else:
        bad = ((buf & 0x0F) == 0) | ((buf >> 4) == 0)
    if bad.any():
        raise _bad(name, "codes", "most-negative integer code is not allowed", at + int(np.argmax(bad)))


def read_tqf(data: bytes) -> dict[str, Tensor]:
    r = _Reader(data)
    count = _read_header(r, TQF_MAGIC)
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        at = r.pos
        name = r.name()
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", at)
        meta_at = r.pos
        codec_id, scale_dtype, reserved, rows, cols, group, scales_len, codes_len = r.unpack(
            _TQF_META, f"metadata of {name!r}"
        )
        try:
            codec = Codec(codec_id)
        except ValueError:
            raise _bad(name, "codec_id", f"unknown codec id {codec_id}", meta_at) from None
        if scale_dtype != 0:
            raise _bad(name, "scale_dtype", f"unsupported scale dtype {scale_dtype}", meta_at + 1)
        if reserved != 0:
            raise _bad(name, "reserved", f"must be 0, got {reserved}", meta_at + 2)
        if rows == 0 or cols == 0:
            raise _bad(name, "rows/cols", f"empty shape {rows}x{cols}", meta_at + 4)
        if codec is Codec.F32RAW:
            if group != 0:
                raise _bad(name, "group_size", "must be 0 for F32RAW", meta_at + 12)
            want_scales, want_codes = 0, 4 * rows * cols
        else:
            mult = codec.group_multiple
            if group == 0 or group % mult or cols % group:
                raise _bad(
                    name, "group_size",
                    f"{group} invalid for {codec.name} with {cols} columns", meta_at + 12,
                )
            want_scales = 4 * rows * (cols // group)
            want_codes = rows * packed_row_bytes(codec, cols)
        if scales_len != want_scales:
            raise _bad(name, "scales_len_bytes", f"expected {want_scales}, got {scales_len}", meta_at + 16)
        if codes_len != want_codes:
            raise _bad(name, "codes_len_bytes", f"expected {want_codes}, got {codes_len}", meta_at + 24)
        scales_at = r.pos
        scales_raw = r.take(scales_len, f"scales of {name!r}")
        codes_at = r.pos
        codes_raw = r.take(codes_len, f"codes of {name!r}")
        if codec is Codec.F32RAW:
            tensors[name] = _matrix_from(codes_raw, rows, cols, name, codes_at)
            continue
        scales = np.frombuffer(scales_raw, dtype="<f4").astype(np.float32)
        if not (np.all(np.isfinite(scales)) and np.all(scales > 0)):
            raise _bad(name, "scales", "scales must be positive and finite", scales_at)
        if codec in (Codec.INT4, Codec.INT8):
            _check_int_codes(codes_raw, codec, name, codes_at)
        spec = QuantSpec(codec, group, ScaleMode.MSE_GRID)
        tensors[name] = QuantizedTensor(spec, rows, cols, scales, bytes(codes_raw))
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes", r.pos)
    return tensors


# ---------------------------------------------------------------------------
# files and summaries
# ---------------------------------------------------------------------------


def read_any(data: bytes) -> tuple[str, dict[str, Tensor]]:
    """Read either format, dispatching on the magic; returns ``(kind, tensors)``."""
    head = bytes(data[:4])
    if head == RWF_MAGIC:
        return "RWF", read_rwf(data)
    if head == TQF_MAGIC:
        return "TQF", read_tqf(data)
    raise FormatError(f"unrecognized magic {head!r}", 0)


def save(path, data: bytes) -> None:
    """Write a complete byte image; the target is replaced atomically."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def tqf_size(shapes: list[tuple[str, int, int]], codec: Codec, group_size: int) -> int:
    """Exact TQF file size for tensors of the given names and shapes."""
    total = _HEADER.size
    for name, rows, cols in shapes:
        total += 2 + len(name.encode("utf-8")) + _TQF_META.size
        if codec is Codec.F32RAW:
            total += 4 * rows * cols
        else:
            total += 4 * rows * (cols // group_size) + rows * packed_row_bytes(codec, cols)
    return total


def inspect(data: bytes) -> str:
    kind, tensors = read_any(data)
    header = ("name", "shape", "codec", "group", "bits/weight", "payload_bytes")
    rows = []
    total_weights = 0
    total_payload = 0
    for name, t in tensors.items():
        n = t.rows * t.cols
        if isinstance(t, Matrix):
            codec, group, payload = "F32RAW", "-", 4 * n
        else:
            codec, group = t.spec.codec.name, str(t.spec.group_size)
            payload = 4 * t.scales.size + len(t.codes)
        total_weights += n
        total_payload += payload
        rows.append((name, f"{t.rows}x{t.cols}", codec, group, f"{8 * payload / n:.6g}", str(payload)))
    lines = [f"{kind} file"]
    if rows:
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    bpw = f"{8 * total_payload / total_weights:.6g}" if total_weights else "-"
    lines.append(
        f"{len(tensors)} tensors, {total_weights} weights, {total_payload} payload bytes, "
        f"{len(data)} file bytes, {bpw} bits/weight"
    )
    return "\n".join(lines)
