"""Distillation losses and straight-through fake quantization.

Losses take a teacher probability vector and raw student logits and return
``(loss, grad)`` with the gradient taken w.r.t. the logits.  They also accept
2-D batches (one distribution per row), returning a loss per row.
"""

from __future__ import annotations

import enum

import numpy as np

from .calib import QuantSpec, quantize_groups
from .core import Matrix
from .errors import ArgumentError

PROB_FLOOR = 1e-12
_LOG_FLOOR = np.log(PROB_FLOOR)


class KLMode(enum.Enum):
    FKL = "fkl"
    RKL = "rkl"
    ADAPTIVE = "adaptive"

    @classmethod
    def parse(cls, name: str) -> "KLMode":
        key = name.strip().lower()
        for m in cls:
            if key in (m.value, m.name.lower()):
                return m
        raise ArgumentError(f"unknown KL mode {name!r}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = z - z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def check_dist(p, atol: float = 1e-6) -> np.ndarray:
    """Validate a probability vector (or a batch of them) and return it as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise ArgumentError("a distribution needs at least one entry")
    if not np.isfinite(p).all() or (p < 0).any():
        raise ArgumentError("probabilities must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise ArgumentError("probabilities must sum to 1")
    return p


def _prepare(teacher, student):
    p_t = check_dist(teacher)
    z = np.asarray(student, dtype=np.float64)
    if z.shape != p_t.shape:
        raise ArgumentError(f"teacher shape {p_t.shape} does not match student {z.shape}")
    if not np.isfinite(z).all():
        raise ArgumentError("student logits must be finite")
    return p_t, z


def _out(loss, grad):
    if loss.ndim == 0:
        return float(loss), grad
    return loss, grad


def _fkl(p_t, z):
    log_s = log_softmax(z)
    p_s = np.exp(log_s)
    log_t = np.log(np.where(p_t > 0, p_t, 1.0))
    terms = np.where(p_t > 0, p_t * (log_t - np.maximum(log_s, _LOG_FLOOR)), 0.0)
    return terms.sum(axis=-1), p_s - p_t


def _rkl(p_t, z):
    log_s = log_softmax(z)
    p_s = np.exp(log_s)
    ratio = log_s - np.log(np.maximum(p_t, PROB_FLOOR))
    loss = (p_s * ratio).sum(axis=-1)
    return loss, p_s * (ratio - loss[..., None])


def forward_kl(teacher, student):
    """``KL(teacher || softmax(student))``; gradient ``p_S - p_T``."""
    return _out(*_fkl(*_prepare(teacher, student)))


def reverse_kl(teacher, student):
    """``KL(softmax(student) || teacher)``; gradient ``p_S * (log(p_S/p_T) - loss)``."""
    return _out(*_rkl(*_prepare(teacher, student)))


def adaptive_kl(teacher, student, confidence_to: str = "forward"):
    """Per-token mix of forward and reverse KL weighted by teacher confidence.

    With ``c = max(teacher)`` the loss is ``c*FKL + (1-c)*RKL``, so a peaked
    teacher pushes the student toward mode covering of its distribution.
    ``confidence_to="reverse"`` swaps the two weights.
    """
    p_t, z = _prepare(teacher, student)
    if confidence_to not in ("forward", "reverse"):
        raise ArgumentError(f"confidence_to must be 'forward' or 'reverse', got {confidence_to!r}")
    c = p_t.max(axis=-1)
    if confidence_to == "reverse":
        c = 1.0 - c
    f_loss, f_grad = _fkl(p_t, z)
    r_loss, r_grad = _rkl(p_t, z)
    loss = c * f_loss + (1.0 - c) * r_loss
    grad = c[..., None] * f_grad + (1.0 - c)[..., None] * r_grad
    return _out(loss, grad)


def kl_loss(mode: KLMode, teacher, student):
    if mode is KLMode.FKL:
        return forward_kl(teacher, student)
    if mode is KLMode.RKL:
        return reverse_kl(teacher, student)
    return adaptive_kl(teacher, student)


def chimera_mixture(refs, weights) -> np.ndarray:
    """Normalized weighted average of reference distributions.

    Stands in for a multi-reference teacher: several candidate target
    distributions are fused into the single one the student is distilled on.
    """
    refs = [check_dist(r) for r in refs]
    if not refs:
        raise ArgumentError("need at least one reference distribution")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != len(refs):
        raise ArgumentError(f"{len(refs)} references but {w.size} weights")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ArgumentError("weights must be finite and non-negative")
    total = w.sum()
    if total == 0:
        raise ArgumentError("weights must not all be zero")
    shape = refs[0].shape
    if any(r.shape != shape for r in refs):
        raise ArgumentError("reference distributions differ in size")
    mix = np.zeros(shape)
    for wi, r in zip(w, refs):
        mix += (wi / total) * r
    return mix


# ---------------------------------------------------------------------------
# straight-through fake quantization
# ---------------------------------------------------------------------------


def ste_mask(w: np.ndarray, scales: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """1 where ``|w| <= s_group * (L_max + 0.5)``, else 0.

    Weights clipped more than half a step past the outermost level get no
    gradient.
    """
    w = np.asarray(w)
    limit = np.repeat(np.asarray(scales, dtype=np.float64), spec.group_size).reshape(w.shape)
    limit *= spec.codec.level_max + 0.5
    return (np.abs(w.astype(np.float64)) <= limit).astype(np.float32)


def fake_quant_array(w: np.ndarray, spec: QuantSpec, scales=None) -> tuple[np.ndarray, np.ndarray]:
    """``(dequantize(quantize(w)), ste_mask)`` on a raw 2-D float array.

    Scales are calibrated from ``w`` on every call unless given.
    """
    w = np.asarray(w, dtype=np.float32)
    _, scales, deq = quantize_groups(w, spec, scales)
    return deq, ste_mask(w, scales, spec)


def fake_quant_weights(W: Matrix, spec: QuantSpec, scales=None) -> tuple[Matrix, Matrix]:
    deq, mask = fake_quant_array(W.data, spec, scales)
    return Matrix(W.rows, W.cols, deq), Matrix(W.rows, W.cols, mask)


def ste_backward(grad_wq: np.ndarray, mask) -> np.ndarray:
    """Gradient w.r.t. the latent weights: pass through where the mask is 1."""
    m = mask.data if isinstance(mask, Matrix) else np.asarray(mask)
    return np.asarray(grad_wq) * m
