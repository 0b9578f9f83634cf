"""Ultra-low-bit weight quantization: codecs, calibration, packed kernels,
distillation losses and checkpoint formats."""

from .calib import QuantizedTensor, QuantSpec, ScaleMode, dequantize_tensor, error_report, quantize_tensor
from .codecs import Codec
from .core import ErrorMetrics, Matrix, Rng, compare, gaussian_matrix
from .errors import ArgumentError, FormatError

__all__ = [
    "ArgumentError",
    "Codec",
    "ErrorMetrics",
    "FormatError",
    "Matrix",
    "QuantSpec",
    "QuantizedTensor",
    "Rng",
    "ScaleMode",
    "compare",
    "dequantize_tensor",
    "error_report",
    "gaussian_matrix",
    "quantize_tensor",
]
