"""Dense matrices, a seeded generator, and reconstruction error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _splitmix(states: np.ndarray) -> np.ndarray:
    z = states.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class Rng:
    """SplitMix64 stream with Box-Muller Gaussians.

    Draw ``k`` (0-based) is ``mix(seed + (k + 1) * GAMMA)``, so the stream can
    be produced in vectorized chunks and still match a scalar implementation
    bit for bit.  Uniforms are ``((u64 >> 11) + 1) / 2**53`` in (0, 1].  Each
    pair of uniforms ``(u1, u2)`` yields ``r*cos(t)`` then ``r*sin(t)``; an odd
    request keeps the second half for the next call.

    Not thread safe: use one generator per thread (see :meth:`split`).
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0
        self._spare: float | None = None

    def next_u64_array(self, n: int) -> np.ndarray:
        if n < 0:
            raise ArgumentError(f"draw count must be >= 0, got {n}")
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        states = np.uint64(self.seed) + idx * _GAMMA
        self.counter += n
        return _splitmix(states)

    def next_u64(self) -> int:
        return int(self.next_u64_array(1)[0])

    def uniform(self, n: int) -> np.ndarray:
        """``n`` float64 draws in (0, 1]."""
        u = self.next_u64_array(n) >> np.uint64(11)
        return (u.astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)

    def normal(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        pos = 0
        if n > 0 and self._spare is not None:
            out[0] = self._spare
            self._spare = None
            pos = 1
        need = n - pos
        if need > 0:
            pairs = (need + 1) // 2
            u = self.uniform(2 * pairs).reshape(pairs, 2)
            r = np.sqrt(-2.0 * np.log(u[:, 0]))
            t = 2.0 * math.pi * u[:, 1]
            z = np.empty((pairs, 2), dtype=np.float64)
            z[:, 0] = r * np.cos(t)
            z[:, 1] = r * np.sin(t)
            z = z.reshape(-1)
            out[pos:] = z[:need]
            if z.size > need:
                self._spare = float(z[need])
        return out

    def split(self) -> "Rng":
        """Independent child generator seeded from this stream."""
        return Rng(self.next_u64())


@dataclass(frozen=True, eq=False)
class Matrix:
    """Row-major single-precision matrix; values are read-only and finite."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ArgumentError(f"matrix dimensions must be positive, got {self.rows}x{self.cols}")
        arr = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if arr.size != self.rows * self.cols:
            raise ArgumentError(
                f"data length {arr.size} does not match {self.rows}x{self.cols}"
            )
        arr = arr.reshape(self.rows, self.cols)
        if not np.isfinite(arr).all():
            raise ArgumentError("matrix values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr) -> "Matrix":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ArgumentError(f"expected a 2-D array, got {arr.ndim} dimensions")
        return cls(arr.shape[0], arr.shape[1], arr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __eq__(self, other):
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols})"


@dataclass(frozen=True)
class ErrorMetrics:
    mse: float
    max_abs: float
    sqnr_db: float  # +inf when mse == 0
    zero_fraction: float
    bits_per_weight: float

    def record(self) -> str:
        """Single-line ``key=value`` form; infinities print as ``inf``."""
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.__dict__.items())


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def gaussian_matrix(rng: Rng, rows: int, cols: int, sigma: float = 1.0) -> Matrix:
    """``rows x cols`` matrix of i.i.d. N(0, sigma^2) draws, row-major from ``rng``."""
    if rows < 1 or cols < 1:
        raise ArgumentError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ArgumentError(f"sigma must be a positive finite number, got {sigma}")
    z = rng.normal(rows * cols) * sigma
    return Matrix(rows, cols, z.astype(np.float32).reshape(rows, cols))


def compare(original: Matrix, reconstructed: Matrix, stored_bits: int) -> ErrorMetrics:
    if original.shape != reconstructed.shape:
        raise ArgumentError(
            f"shape mismatch: {original.shape} vs {reconstructed.shape}"
        )
    if stored_bits <= 0:
        raise ArgumentError(f"stored_bits must be positive, got {stored_bits}")
    a = original.data.astype(np.float64)
    b = reconstructed.data.astype(np.float64)
    diff = a - b
    mse = float(np.mean(diff * diff))
    max_abs = float(np.max(np.abs(diff)))
    signal = float(np.mean(a * a))
    if mse == 0.0:
        sqnr = math.inf
    elif signal == 0.0:
        sqnr = -math.inf
    else:
        sqnr = 10.0 * math.log10(signal / mse)
    zero_fraction = float(np.count_nonzero(reconstructed.data == 0)) / reconstructed.data.size
    return ErrorMetrics(
        mse=mse,
        max_abs=max_abs,
        sqnr_db=sqnr,
        zero_fraction=zero_fraction,
        bits_per_weight=stored_bits / (original.rows * original.cols),
    )
