# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled packed matvec kernels.

Same contract as ``_pykernels``: per-group float64 accumulation, one scale
multiply per group, groups summed in column order.  Row loops are
independent, so results do not depend on row scheduling.
"""

import numpy as np

from libc.stdint cimport uint64_t


# offsets into the interleaved (x, -x) buffer for the three survivors of a code
cdef int[32][3] _OFF


def _init_tables():
    global _OFF
    cdef int code, z, k, p
    for code in range(32):
        z = code >> 3
        k = 0
        for p in range(4):
            if p != z:
                _OFF[code][k] = 2 * p + (0 if (code >> k) & 1 else 1)
                k += 1


_init_tables()


def matvec_sherry(const unsigned char[::1] codes, const float[::1] scales,
                  const double[::1] x, Py_ssize_t rows, Py_ssize_t cols, Py_ssize_t group):
    """Add/sub only: each code picks three entries of a signed copy of ``x``."""
    cdef Py_ssize_t row_bytes = cols * 5 // 32
    cdef Py_ssize_t gpr = cols // group
    cdef Py_ssize_t sbpg = group // 32
    cdef Py_ssize_t r, g, sb, off, j
    cdef int k, code
    cdef uint64_t word
    cdef double acc, total
    cdef const unsigned char* p
    cdef const int* o
    signed_x = np.empty(2 * cols, dtype=np.float64)
    cdef double[::1] xs = signed_x
    for j in range(cols):
        xs[2 * j] = x[j]
        xs[2 * j + 1] = -x[j]
    y = np.empty(rows, dtype=np.float64)
    cdef double[::1] out = y
    for r in range(rows):
        total = 0.0
        for g in range(gpr):
            acc = 0.0
            for sb in range(sbpg):
                off = r * row_bytes + (g * sbpg + sb) * 5
                p = &codes[off]
                word = (<uint64_t>p[0] | (<uint64_t>p[1] << 8) | (<uint64_t>p[2] << 16)
                        | (<uint64_t>p[3] << 24) | (<uint64_t>p[4] << 32))
                j = 2 * (g * group + sb * 32)
                for k in range(8):
                    o = _OFF[(word >> (5 * k)) & 31]
                    acc += xs[j + o[0]]
                    acc += xs[j + o[1]]
                    acc += xs[j + o[2]]
                    j += 8
            total += acc * <double>scales[r * gpr + g]
        out[r] = total
    return y


def matvec_seq2(const unsigned char[::1] codes, const float[::1] scales,
                const double[::1] x, Py_ssize_t rows, Py_ssize_t cols, Py_ssize_t group):
    cdef Py_ssize_t row_bytes = cols // 4
    cdef Py_ssize_t gpr = cols // group
    cdef Py_ssize_t r, g, j
    cdef unsigned char b
    cdef double acc, total
    cdef double[4] lv
    lv[0] = -1.5; lv[1] = -0.5; lv[2] = 0.5; lv[3] = 1.5
    y = np.empty(rows, dtype=np.float64)
    cdef double[::1] out = y
    for r in range(rows):
        total = 0.0
        for g in range(gpr):
            acc = 0.0
            for j in range(g * group, (g + 1) * group, 4):
                b = codes[r * row_bytes + j // 4]
                acc += lv[b & 3] * x[j]
                acc += lv[(b >> 2) & 3] * x[j + 1]
                acc += lv[(b >> 4) & 3] * x[j + 2]
                acc += lv[(b >> 6) & 3] * x[j + 3]
            total += acc * <double>scales[r * gpr + g]
        out[r] = total
    return y


def matvec_int4(const unsigned char[::1] codes, const float[::1] scales,
                const double[::1] x, Py_ssize_t rows, Py_ssize_t cols, Py_ssize_t group):
    cdef Py_ssize_t row_bytes = cols // 2
    cdef Py_ssize_t gpr = cols // group
    cdef Py_ssize_t r, g, j
    cdef unsigned char b
    cdef double acc, total
    y = np.empty(rows, dtype=np.float64)
    cdef double[::1] out = y
    for r in range(rows):
        total = 0.0
        for g in range(gpr):
            acc = 0.0
            for j in range(g * group, (g + 1) * group, 2):
                b = codes[r * row_bytes + j // 2]
                acc += <double>(<int>(b & 0x0F) - 8) * x[j]
                acc += <double>(<int>(b >> 4) - 8) * x[j + 1]
            total += acc * <double>scales[r * gpr + g]
        out[r] = total
    return y


def matvec_int8(const unsigned char[::1] codes, const float[::1] scales,
                const double[::1] x, Py_ssize_t rows, Py_ssize_t cols, Py_ssize_t group):
    cdef Py_ssize_t gpr = cols // group
    cdef Py_ssize_t r, g, j
    cdef double acc, total
    y = np.empty(rows, dtype=np.float64)
    cdef double[::1] out = y
    for r in range(rows):
        total = 0.0
        for g in range(gpr):
            acc = 0.0
            for j in range(g * group, (g + 1) * group):
                acc += <double>(<int>codes[r * cols + j] - 128) * x[j]
            total += acc * <double>scales[r * gpr + g]
        out[r] = total
    return y

