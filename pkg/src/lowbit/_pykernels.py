"""Pure numpy packed matvec kernels (fallback when the extension is not built).

Every function has the same signature as its twin in ``_ckernels.pyx``:
``(codes, scales, x, rows, cols, group) -> y`` with ``codes`` a uint8 buffer
holding consecutive packed rows, ``scales`` float32 in row-major group order
and ``x`` float64.  Each group is accumulated in float64, multiplied by its
scale, and the group results are summed in order.
"""

import numpy as np

from .codecs import SHERRY_TABLE


def _finish(partial, scales, rows, cols, group):
    per_group = partial.reshape(rows, cols // group) * scales.reshape(rows, -1).astype(np.float64)
    return per_group.sum(axis=1)


def matvec_sherry(codes, scales, x, rows, cols, group):
    buf = np.frombuffer(codes, dtype=np.uint8)
    n_blocks = rows * cols // 4
    bits = np.unpackbits(buf, bitorder="little")[: 5 * n_blocks].reshape(n_blocks, 5)
    block_codes = bits @ np.array([1, 2, 4, 8, 16], dtype=np.uint8)
    tern = SHERRY_TABLE[block_codes].reshape(rows, cols)
    xb = np.broadcast_to(x, (rows, cols))
    # signed selection only: +x, -x or skip
    contrib = np.where(tern > 0, xb, np.where(tern < 0, -xb, 0.0))
    partial = contrib.reshape(-1, group).sum(axis=1)
    return _finish(partial, scales, rows, cols, group)


def _matvec_levels(levels, scales, x, rows, cols, group):
    prod = levels.reshape(rows, cols) * x
    partial = prod.reshape(-1, group).sum(axis=1)
    return _finish(partial, scales, rows, cols, group)


def matvec_seq2(codes, scales, x, rows, cols, group):
    buf = np.frombuffer(codes, dtype=np.uint8)
    c = ((buf[:, None] >> np.array([0, 2, 4, 6], dtype=np.uint8)) & 3).reshape(-1)[: rows * cols]
    return _matvec_levels(c.astype(np.float64) - 1.5, scales, x, rows, cols, group)


def matvec_int4(codes, scales, x, rows, cols, group):
    buf = np.frombuffer(codes, dtype=np.uint8)
    c = np.stack([buf & 0x0F, buf >> 4], axis=1).reshape(-1)[: rows * cols]
    return _matvec_levels(c.astype(np.float64) - 8.0, scales, x, rows, cols, group)


def matvec_int8(codes, scales, x, rows, cols, group):
    c = np.frombuffer(codes, dtype=np.uint8)[: rows * cols]
    return _matvec_levels(c.astype(np.float64) - 128.0, scales, x, rows, cols, group)


def matvec_sherry_instrumented(codes, scales, x, rows, cols, group):
    """Scalar Sherry matvec that also counts floating-point multiplies.

    Walks the stream one 5-byte superblock at a time, exactly as the compiled
    kernel does.  Returns ``(y, multiplies)``.
    """
    y = [0.0] * rows
    mults = 0
    row_bytes = cols * 5 // 32
    for r in range(rows):
        total = 0.0
        base = r * row_bytes
        for g in range(cols // group):
            acc = 0.0
            for sb in range(group // 32):
                off = base + (g * group // 32 + sb) * 5
                word = int.from_bytes(codes[off : off + 5], "little")
                col0 = g * group + sb * 32
                for k in range(8):
                    code = (word >> (5 * k)) & 31
                    zero = code >> 3
                    j = col0 + 4 * k
                    bit = 0
                    for p in range(4):
                        if p == zero:
                            continue
                        if (code >> bit) & 1:
                            acc += x[j + p]
                        else:
                            acc -= x[j + p]
                        bit += 1
            total += acc * float(scales[r * (cols // group) + g])
            mults += 1
        y[r] = total
    return np.array(y), mults
