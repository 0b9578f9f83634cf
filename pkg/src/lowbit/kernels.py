"""Matrix-vector products on packed weights, with a dense reference.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
numpy fallback in ``_pykernels`` is selected at import.  ``BACKEND`` names the
active one and ``set_backend`` switches explicitly (benchmarks, tests).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _pykernels
from .calib import QuantizedTensor
from .codecs import Codec
from .core import Matrix, Rng
from .errors import ArgumentError

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"

_KERNEL_NAMES = {
    Codec.SHERRY125: "matvec_sherry",
    Codec.SEQ2: "matvec_seq2",
    Codec.INT4: "matvec_int4",
    Codec.INT8: "matvec_int8",
}


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global BACKEND
    if name not in _BACKENDS:
        raise ArgumentError(f"kernel backend {name!r} not available (have {available_backends()})")
    BACKEND = name


def _vector(x, n: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if x.size != n:
        raise ArgumentError(f"vector length {x.size} does not match {n} columns")
    return x


def matvec_dense(m: Matrix, x, group_size: int | None = None) -> np.ndarray:
    """Reference ``y = M x``.

    Products are summed in float64 within each group of ``group_size``
    columns (whole row by default), then group sums are added in order.
    """
    x = _vector(x, m.cols)
    group = m.cols if group_size is None else group_size
    if group < 1 or m.cols % group:
        raise ArgumentError(f"group size {group} does not divide {m.cols} columns")
    prod = m.data.astype(np.float64) * x
    return prod.reshape(m.rows, m.cols // group, group).sum(axis=2).sum(axis=1)


def matvec_packed(qt: QuantizedTensor, x, backend: str | None = None) -> np.ndarray:
    """``y = dequantize(qt) x`` computed straight from the packed codes."""
    qt.validate()
    x = _vector(x, qt.cols)
    impl = _BACKENDS[backend or BACKEND]
    fn = getattr(impl, _KERNEL_NAMES[qt.spec.codec])
    codes = np.frombuffer(qt.codes, dtype=np.uint8)
    scales = np.ascontiguousarray(qt.scales, dtype=np.float32)
    return fn(codes, scales, x, qt.rows, qt.cols, qt.spec.group_size)


@dataclass(frozen=True)
class BenchReport:
    codec: str
    backend: str
    rows: int
    cols: int
    iters: int
    ns_per_matvec: float
    code_bytes_touched: int
    scale_bytes_touched: int
    weights_per_second: float
    bytes_per_weight_touched: float

    def table(self) -> str:
        w = max(len(k) for k in self.__dict__)
        lines = []
        for k, v in self.__dict__.items():
            if isinstance(v, float):
                v = f"{v:.6g}"
            lines.append(f"{k:<{w}}  {v}")
        return "\n".join(lines)

    def record(self) -> str:
        parts = []
        for k, v in self.__dict__.items():
            parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
        return " ".join(parts)


def bench_matvec(qt: QuantizedTensor, iters: int, rng: Rng, backend: str | None = None) -> BenchReport:
    """Time ``iters`` packed matvecs on one random input; report the median.

    ``bytes_per_weight_touched`` counts code bytes plus 4 bytes per scale, the
    full weight payload each matvec reads once.
    """
    if iters < 1:
        raise ArgumentError(f"iters must be >= 1, got {iters}")
    backend = backend or BACKEND
    x = rng.normal(qt.cols)
    matvec_packed(qt, x, backend)  # warm-up
    times = []
    for _ in range(iters):
        t0 = time.perf_counter_ns()
        matvec_packed(qt, x, backend)
        times.append(time.perf_counter_ns() - t0)
    ns = float(np.median(times))
    n_weights = qt.rows * qt.cols
    code_bytes = len(qt.codes)
    scale_bytes = 4 * qt.scales.size
    return BenchReport(
        codec=qt.spec.codec.name,
        backend=backend,
        rows=qt.rows,
        cols=qt.cols,
        iters=iters,
        ns_per_matvec=max(ns, 1.0),
        code_bytes_touched=code_bytes,
        scale_bytes_touched=scale_bytes,
        weights_per_second=n_weights / (max(ns, 1.0) * 1e-9),
        bytes_per_weight_touched=(code_bytes + scale_bytes) / n_weights,
    )
