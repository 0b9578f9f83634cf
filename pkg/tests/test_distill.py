import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowbit.calib import QuantSpec, ScaleMode
from lowbit.codecs import Codec
from lowbit.core import Matrix, Rng, compare, gaussian_matrix
from lowbit.distill import (
    KLMode,
    adaptive_kl,
    chimera_mixture,
    fake_quant_array,
    fake_quant_weights,
    forward_kl,
    kl_loss,
    reverse_kl,
    softmax,
    ste_backward,
)
from lowbit.errors import ArgumentError

LOSSES = [forward_kl, reverse_kl, adaptive_kl]


def mp_kl(p, q):
    mpmath.mp.dps = 40
    return float(mpmath.fsum(mpmath.mpf(a) * mpmath.log(mpmath.mpf(a) / mpmath.mpf(b)) for a, b in zip(p, q) if a > 0))


def finite_diff(fn, teacher, z, h=1e-4):
    g = np.zeros_like(z)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (fn(teacher, zp)[0] - fn(teacher, zm)[0]) / (2 * h)
    return g


def random_case(rng, v=8):
    teacher = softmax(rng.normal(v) * 1.5)
    return teacher, rng.normal(v)


def test_anchor_values_against_high_precision():
    t, s = [0.9, 0.1], [0.5, 0.5]
    z = np.log(s)
    f = forward_kl(t, z)[0]
    r = reverse_kl(t, z)[0]
    a = adaptive_kl(t, z)[0]
    assert f == pytest.approx(mp_kl(t, s), abs=1e-12)
    assert r == pytest.approx(mp_kl(s, t), abs=1e-12)
    assert f == pytest.approx(0.368064, abs=1e-6)
    assert r == pytest.approx(0.510826, abs=1e-6)
    assert a == pytest.approx(0.9 * f + 0.1 * r, abs=1e-15)
    assert a == pytest.approx(0.382340, abs=1e-6)


def test_forward_kl_one_hot():
    loss, grad = forward_kl([1.0, 0.0], [0.0, 0.0])
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    np.testing.assert_allclose(grad, [-0.5, 0.5])


@pytest.mark.parametrize("fn", LOSSES)
def test_zero_when_teacher_equals_student(fn):
    z = Rng(4).normal(8)
    loss, grad = fn(softmax(z), z)
    assert abs(loss) < 1e-12
    np.testing.assert_allclose(grad, 0, atol=1e-12)


def test_adaptive_boundaries():
    z = Rng(6).normal(4)
    one_hot = np.array([0.0, 1.0, 0.0, 0.0])
    assert adaptive_kl(one_hot, z)[0] == forward_kl(one_hot, z)[0]
    uniform = np.full(4, 0.25)
    want = 0.25 * forward_kl(uniform, z)[0] + 0.75 * reverse_kl(uniform, z)[0]
    assert adaptive_kl(uniform, z)[0] == pytest.approx(want, abs=1e-15)
    flipped = 0.75 * forward_kl(uniform, z)[0] + 0.25 * reverse_kl(uniform, z)[0]
    assert adaptive_kl(uniform, z, confidence_to="reverse")[0] == pytest.approx(flipped, abs=1e-15)


@pytest.mark.parametrize("fn", LOSSES)
def test_gradients_match_finite_differences(fn):
    rng = Rng(2024)
    for _ in range(20):
        t, z = random_case(rng)
        _, grad = fn(t, z)
        fd = finite_diff(fn, t, z)
        assert np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-8) < 1e-4


def test_batched_losses_match_rows():
    rng = Rng(1)
    t = softmax(rng.normal(24).reshape(3, 8))
    z = rng.normal(24).reshape(3, 8)
    for fn in LOSSES:
        loss, grad = fn(t, z)
        for i in range(3):
            li, gi = fn(t[i], z[i])
            assert loss[i] == pytest.approx(li, abs=1e-15)
            np.testing.assert_allclose(grad[i], gi, atol=1e-15)
    assert kl_loss(KLMode.RKL, t[0], z[0])[0] == reverse_kl(t[0], z[0])[0]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 12))
def test_losses_nonnegative_and_adaptive_between(seed, v):
    rng = Rng(seed)
    t = softmax(rng.normal(v) * 3)
    z = rng.normal(v) * 3
    f, r, a = forward_kl(t, z)[0], reverse_kl(t, z)[0], adaptive_kl(t, z)[0]
    assert f >= -1e-12 and r >= -1e-12 and a >= -1e-12
    assert min(f, r) - 1e-12 <= a <= max(f, r) + 1e-12


def test_loss_input_validation():
    with pytest.raises(ArgumentError):
        forward_kl([0.5, 0.5], [0.0, 0.0, 0.0])
    with pytest.raises(ArgumentError):
        reverse_kl([0.6, 0.6], [0.0, 0.0])
    with pytest.raises(ArgumentError):
        adaptive_kl([1.2, -0.2], [0.0, 0.0])
    with pytest.raises(ArgumentError):
        adaptive_kl([0.5, 0.5], [0.0, 0.0], confidence_to="both")


def test_chimera_mixture_examples():
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(chimera_mixture([p], [2.0]), p)
    np.testing.assert_allclose(chimera_mixture([p, p], [1.0, 7.0]), p, atol=1e-15)
    np.testing.assert_allclose(chimera_mixture([[1, 0], [0, 1]], [1, 3]), [0.25, 0.75])
    with pytest.raises(ArgumentError):
        chimera_mixture([], [])
    with pytest.raises(ArgumentError):
        chimera_mixture([p, p], [0, 0])
    with pytest.raises(ArgumentError):
        chimera_mixture([p], [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 5))
def test_chimera_normalized_and_permutation_equivariant(seed, k):
    rng = Rng(seed)
    refs = [softmax(rng.normal(6)) for _ in range(k)]
    w = rng.uniform(k)
    mix = chimera_mixture(refs, w)
    assert abs(mix.sum() - 1) < 1e-6
    perm = np.arange(k)[::-1]
    np.testing.assert_allclose(chimera_mixture([refs[i] for i in perm], w[perm]), mix, atol=1e-12)


def test_fake_quant_fixed_point():
    spec = QuantSpec(Codec.SEQ2, 4, ScaleMode.ABSMAX)
    W = Matrix.from_array([[-1.5, -0.5, 0.5, 1.5], [0.75, -0.25, 0.25, -0.75]])
    Wq, mask = fake_quant_weights(W, spec)
    assert Wq == W
    assert (mask.data == 1).all()


def test_fake_quant_clip_rule():
    spec = QuantSpec(Codec.SEQ2, 4)
    w = np.array([[10.0, 1.9, -2.0, -2.1]], dtype=np.float32)
    _, mask = fake_quant_array(w, spec, scales=[1.0])
    np.testing.assert_array_equal(mask, [[0, 1, 1, 0]])


def test_fake_quant_sherry_sparsity_and_recompute():
    spec = QuantSpec(Codec.SHERRY125, 32)
    W = gaussian_matrix(Rng(3), 16, 64)
    Wq, mask = fake_quant_weights(W, spec)
    assert compare(W, Wq, 1).zero_fraction == 0.25
    W2 = Matrix.from_array(W.data * 2)
    Wq2, _ = fake_quant_weights(W2, spec)
    np.testing.assert_allclose(Wq2.data, Wq.data * 2, rtol=1e-6)


def test_ste_backward_structure():
    rng = Rng(5)
    g = rng.normal(64).reshape(8, 8)
    mask = (rng.uniform(64) > 0.3).astype(np.float32).reshape(8, 8)
    out = ste_backward(g, Matrix.from_array(mask))
    np.testing.assert_array_equal(out[mask == 1], g[mask == 1])
    assert (out[mask == 0] == 0).all()
