import math

import numpy as np
import pytest

from lowbit.core import ErrorMetrics, Matrix, Rng, compare, gaussian_matrix
from lowbit.errors import ArgumentError

M64 = (1 << 64) - 1


def splitmix_scalar(seed, n):
    """Textbook SplitMix64 on Python ints."""
    state = seed
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


def test_rng_matches_scalar_splitmix():
    r = Rng(42)
    got = [int(v) for v in r.next_u64_array(500)] + [r.next_u64() for _ in range(500)]
    assert got == splitmix_scalar(42, 1000)


def test_normal_is_box_muller_on_the_stream():
    raw = splitmix_scalar(9, 6)
    u = [((v >> 11) + 1) / 2.0**53 for v in raw]
    want = []
    for u1, u2 in zip(u[::2], u[1::2]):
        rr = math.sqrt(-2 * math.log(u1))
        want += [rr * math.cos(2 * math.pi * u2), rr * math.sin(2 * math.pi * u2)]
    np.testing.assert_allclose(Rng(9).normal(6), want, rtol=0, atol=1e-15)


def test_normal_odd_requests_keep_the_spare():
    a = Rng(3)
    b = Rng(3)
    split = np.concatenate([a.normal(3), a.normal(1), a.normal(5)])
    assert split.tobytes() == b.normal(9).tobytes()


def test_rng_reproducible_over_a_million_draws():
    assert Rng(2024).next_u64_array(10**6).tobytes() == Rng(2024).next_u64_array(10**6).tobytes()


def test_gaussian_matrix_deterministic():
    a = gaussian_matrix(Rng(7), 2, 2, 1.0)
    b = gaussian_matrix(Rng(7), 2, 2, 1.0)
    assert a.data.tobytes() == b.data.tobytes()


@pytest.mark.parametrize("rows,cols,sigma", [(2, 2, 0.0), (2, 2, -1.0), (0, 3, 1.0), (3, 0, 1.0)])
def test_gaussian_matrix_rejects_bad_arguments(rows, cols, sigma):
    with pytest.raises(ArgumentError):
        gaussian_matrix(Rng(7), rows, cols, sigma)


def test_gaussian_matrix_moments():
    m = gaussian_matrix(Rng(7), 1000, 1000, 1.0).data.astype(np.float64)
    assert abs(m.mean()) <= 0.01
    assert abs(m.std() - 1.0) <= 0.01


def test_matrix_invariants():
    with pytest.raises(ArgumentError):
        Matrix(2, 2, [1.0, 2.0, 3.0])
    with pytest.raises(ArgumentError):
        Matrix(1, 2, [1.0, float("nan")])
    with pytest.raises(ArgumentError):
        Matrix.from_array([[1.0, float("inf")]])
    m = Matrix.from_array([[1, 2], [3, 4]])
    assert m.data.dtype == np.float32 and m.shape == (2, 2)
    with pytest.raises(ValueError):
        m.data[0, 0] = 5


def test_compare_identity():
    m = gaussian_matrix(Rng(1), 4, 8)
    e = compare(m, m, 32 * 32)
    assert e.mse == 0 and e.max_abs == 0 and e.bits_per_weight == 32
    assert e.sqnr_db == math.inf
    assert "sqnr_db=inf" in e.record()


def test_compare_analytic():
    e = compare(Matrix.from_array([2.0]), Matrix.from_array([1.0]), 8)
    assert e.mse == 1.0
    assert e.sqnr_db == pytest.approx(10 * math.log10(4), abs=1e-12)
    assert e.sqnr_db == pytest.approx(6.0206, abs=1e-4)
    assert e.bits_per_weight == 8


def test_compare_against_elementwise_oracle():
    a = gaussian_matrix(Rng(5), 64, 64)
    b = gaussian_matrix(Rng(6), 64, 64)
    flat_a = [float(v) for v in a.data.reshape(-1)]
    flat_b = [float(v) for v in b.data.reshape(-1)]
    sq = [(x - y) ** 2 for x, y in zip(flat_a, flat_b)]
    mse = math.fsum(sq) / len(sq)
    sig = math.fsum(x * x for x in flat_a) / len(flat_a)
    e = compare(a, b, 1234)
    assert e.mse == pytest.approx(mse, rel=1e-12)
    assert e.max_abs == max(abs(x - y) for x, y in zip(flat_a, flat_b))
    assert e.sqnr_db == pytest.approx(10 * math.log10(sig / mse), rel=1e-12)
    assert e.bits_per_weight == 1234 / 4096


def test_compare_symmetry_and_errors():
    a = gaussian_matrix(Rng(5), 8, 8)
    b = gaussian_matrix(Rng(6), 8, 8)
    ab, ba = compare(a, b, 10), compare(b, a, 10)
    assert ab.mse == ba.mse and ab.max_abs == ba.max_abs
    assert ab.sqnr_db != ba.sqnr_db
    with pytest.raises(ArgumentError):
        compare(a, gaussian_matrix(Rng(1), 8, 4), 10)
    with pytest.raises(ArgumentError):
        compare(a, b, 0)


def test_compare_counts_exact_zeros():
    a = Matrix.from_array([[1.0, 2.0, 3.0, 4.0]])
    b = Matrix.from_array([[0.0, 2.0, -0.0, 4.0]])
    e = compare(a, b, 4)
    assert e.zero_fraction == 0.5
    assert isinstance(e, ErrorMetrics)
