"""``lowbit`` command line.

Exit codes: 0 success, 1 usage, 2 format or I/O error, 3 verification or
property failure.
"""

from __future__ import annotations

import argparse
import sys


from . import kernels, store
from .calib import (
    QuantizedTensor,
    QuantSpec,
    ScaleMode,
    dequantize_tensor,
    error_report,
    quantize_tensor,
    sherry_structure_ok,
)
from .codecs import Codec
from .core import Matrix, Rng, compare
from .distill import KLMode
from .errors import ArgumentError, FormatError

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_VERIFY = 0, 1, 2, 3

CODEC_CHOICES = {"sherry125": Codec.SHERRY125, "seq2": Codec.SEQ2, "int4": Codec.INT4, "int8": Codec.INT8}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lowbit", description="Low-bit weight quantization toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("quantize", help="quantize an RWF file into TQF")
    q.add_argument("--input", required=True)
    q.add_argument("--output", required=True)
    q.add_argument("--codec", required=True, choices=sorted(CODEC_CHOICES))
    q.add_argument("--group-size", type=int, default=128)
    q.add_argument("--scale-mode", default="mse", choices=["mse", "absmax"])

    d = sub.add_parser("dequantize", help="reconstruct dense RWF weights from TQF")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)

    v = sub.add_parser("verify", help="check a TQF file against the original RWF")
    v.add_argument("--input", required=True)
    v.add_argument("--against", required=True)
    v.add_argument("--max-mse", type=float, default=None)

    i = sub.add_parser("inspect", help="summarize an RWF or TQF file")
    i.add_argument("path")

    b = sub.add_parser("bench", help="time packed matvec on every quantized tensor")
    b.add_argument("--input", required=True)
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("qat-demo", help="teacher, PTQ and QAT students on a toy LM")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--codec", default="seq2", choices=["seq2", "sherry125"])
    t.add_argument("--kl-mode", default="adaptive", choices=[m.value for m in KLMode])
    t.add_argument("--lambda", dest="lam", type=float, default=1.0)
    return p


def _read(path: str) -> bytes:
    try:
        return store.load(path)
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror or e}") from None


def _metrics_table(rows: list[tuple[str, str, str, object]]) -> list[str]:
    header = ("tensor", "shape", "codec", "mse", "max_abs", "sqnr_db", "zero_fraction", "bits_per_weight")
    cells = []
    for name, shape, codec, m in rows:
        rec = dict(kv.split("=") for kv in m.record().split())
        cells.append((name, shape, codec, rec["mse"], rec["max_abs"], rec["sqnr_db"],
                      rec["zero_fraction"], rec["bits_per_weight"]))
    widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    lines += [f"tensor={name} codec={codec} {m.record()}" for name, _, codec, m in rows]
    return lines


def cmd_quantize(args) -> int:
    codec = CODEC_CHOICES[args.codec]
    spec = QuantSpec(codec, args.group_size, ScaleMode.parse(args.scale_mode))
    dense = store.read_rwf(_read(args.input))
    out = {}
    rows = []
    for name, m in dense.items():
        try:
            spec.check_cols(m.cols)
        except ArgumentError as e:
            raise ArgumentError(f"tensor {name!r}: {e}") from None
        qt = quantize_tensor(m, spec)
        out[name] = qt
        rows.append((name, f"{m.rows}x{m.cols}", codec.name, error_report(m, qt)))
    store.save(args.output, store.write_tqf(out))
    print("\n".join(_metrics_table(rows)))
    return EXIT_OK


def cmd_dequantize(args) -> int:
    tensors = store.read_tqf(_read(args.input))
    dense = {
        name: t if isinstance(t, Matrix) else dequantize_tensor(t) for name, t in tensors.items()
    }
    store.save(args.output, store.write_rwf(dense))
    print(f"wrote {len(dense)} tensors to {args.output}")
    return EXIT_OK


def cmd_verify(args) -> int:
    tensors = store.read_tqf(_read(args.input))
    dense = store.read_rwf(_read(args.against))
    if set(tensors) != set(dense):
        missing = sorted(set(tensors) ^ set(dense))
        raise FormatError(f"tensor sets differ: {missing}")
    rows = []
    failures = []
    for name, t in tensors.items():
        ref = dense[name]
        if (t.rows, t.cols) != ref.shape:
            raise FormatError(f"tensor {name!r}: shape {t.rows}x{t.cols} vs {ref.rows}x{ref.cols}")
        if isinstance(t, Matrix):
            m = compare(ref, t, 32 * t.rows * t.cols)
            codec = "F32RAW"
        else:
            m = error_report(ref, t)
            codec = t.spec.codec.name
            if t.spec.codec is Codec.SHERRY125:
                if m.zero_fraction != 0.25:
                    failures.append(f"{name}: zero_fraction {m.zero_fraction} != 0.25")
                if not sherry_structure_ok(t):
                    failures.append(f"{name}: 3:4 block structure violated")
        if args.max_mse is not None and m.mse > args.max_mse:
            failures.append(f"{name}: mse {m.mse:.6g} > {args.max_mse:g}")
        rows.append((name, f"{t.rows}x{t.cols}", codec, m))
    print("\n".join(_metrics_table(rows)))
    for f in failures:
        print(f"FAIL {f}")
    print(f"verify={'fail' if failures else 'pass'} tensors={len(rows)} failures={len(failures)}")
    return EXIT_VERIFY if failures else EXIT_OK


def cmd_inspect(args) -> int:
    print(store.inspect(_read(args.path)))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iters < 1:
        raise ArgumentError("--iters must be >= 1")
    _, tensors = store.read_any(_read(args.input))
    rng = Rng(args.seed)
    n = 0
    for name, t in tensors.items():
        if not isinstance(t, QuantizedTensor):
            continue
        rep = kernels.bench_matvec(t, args.iters, rng)
        print(f"[{name}]")
        print(rep.table())
        print(f"tensor={name} {rep.record()}")
        n += 1
    if n == 0:
        print("no quantized tensors to benchmark")
    return EXIT_OK


def cmd_qat_demo(args) -> int:
    from .qat import QatConfig, run_qat_demo

    config = QatConfig(
        seed=args.seed,
        steps=args.steps,
        lam=args.lam,
        codec=CODEC_CHOICES[args.codec],
        kl_mode=KLMode.parse(args.kl_mode),
    )
    report = run_qat_demo(config)
    print(report.table())
    print(report.record())
    return EXIT_OK if report.qat_beats_ptq else EXIT_VERIFY


_COMMANDS = {
    "quantize": cmd_quantize,
    "dequantize": cmd_dequantize,
    "verify": cmd_verify,
    "inspect": cmd_inspect,
    "bench": cmd_bench,
    "qat-demo": cmd_qat_demo,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except FormatError as e:
        print(f"lowbit: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ArgumentError as e:
        print(f"lowbit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"lowbit: I/O error: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
