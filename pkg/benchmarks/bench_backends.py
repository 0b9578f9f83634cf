"""Packed matvec throughput: compiled kernels vs the numpy fallback.

    python benchmarks/bench_backends.py [--rows 1024] [--cols 1024] [--iters 20]

Prints one aligned table and a key=value line per (codec, backend).
"""

import argparse

from lowbit import kernels
from lowbit.calib import QuantSpec, quantize_tensor
from lowbit.codecs import Codec
from lowbit.core import Rng, gaussian_matrix


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=1024)
    p.add_argument("--cols", type=int, default=1024)
    p.add_argument("--group-size", type=int, default=128)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the python backend is available")
    m = gaussian_matrix(Rng(args.seed), args.rows, args.cols)
    reports = []
    for codec in (Codec.SHERRY125, Codec.SEQ2, Codec.INT4, Codec.INT8):
        qt = quantize_tensor(m, QuantSpec(codec, args.group_size))
        for b in backends:
            reports.append(kernels.bench_matvec(qt, args.iters, Rng(args.seed + 1), backend=b))

    base = {r.codec: r.ns_per_matvec for r in reports if r.backend == "python"}
    header = f"{'codec':<10} {'backend':<8} {'us/matvec':>10} {'Gweights/s':>11} {'bytes/w':>8} {'speedup':>8}"
    print(header)
    for r in reports:
        speedup = base[r.codec] / r.ns_per_matvec
        print(f"{r.codec:<10} {r.backend:<8} {r.ns_per_matvec / 1e3:>10.1f} "
              f"{r.weights_per_second / 1e9:>11.3f} {r.bytes_per_weight_touched:>8.4f} {speedup:>7.2f}x")
    for r in reports:
        print(r.record())


if __name__ == "__main__":
    main()
