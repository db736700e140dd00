"""Command-line front end.

Subcommands wire the generators, quantizers, metrics, GEMM, and container
I/O into reproducible experiments. Machine-readable output (``--format
csv`` or ``json``) is byte-identical across runs for identical flags; the
human ``table`` format makes no stability promise.

Exit codes: 0 success, 1 usage error, 2 data or verification error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional, Sequence

from .gemm import (
    TileConfig,
    matmul_quantized,
    matmul_reference,
    max_ulp_divergence,
    roofline_overhead,
)
from .metrics import (
    GeneratorSpec,
    _evaluate_point,
    ablation_sweep,
    flush_to_zero_rate,
    generate_tensor,
    qsnr_tensor,
)
from .quantize import (
    SchemeConfig,
    Variant,
    build_error_lut,
    default_candidates,
    dequantize_tensor,
    quantize_tensor,
)
from .tensorio import load_quant, load_tensor, save_quant, save_tensor

__all__ = ["main"]

SCHEME_NAMES = {
    "ocp32": Variant.OCP32,
    "mx16": Variant.MX16,
    "mx16-oas": Variant.MX16_OAS,
    "mbs-s": Variant.MBS_S,
    "mbs-d": Variant.MBS_D,
    "nvfp4": Variant.NVFP4,
}

DIST_NAMES = {
    "gaussian": "gaussian",
    "lognormal": "lognormal",
    "student-t": "student_t",
    "gaussian-outliers": "gaussian_with_outliers",
}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage failures exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt_value(v: object) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _json_safe(v: object) -> object:
    if isinstance(v, float) and not math.isfinite(v):
        return _fmt_value(v)
    return v


def _emit_metrics(rows: list[dict], fmt: str) -> None:
    """Emit metric rows in the fixed (scheme, macro_size, role, metric, value) schema."""
    if fmt == "json":
        payload = [{k: _json_safe(v) for k, v in row.items()} for row in rows]
        print(json.dumps(payload, sort_keys=True))
    elif fmt == "csv":
        print("scheme,macro_size,role,metric,value")
        for row in rows:
            print(
                f"{row['scheme']},{row['macro_size']},{row['role']},"
                f"{row['metric']},{_fmt_value(row['value'])}"
            )
    else:
        for row in rows:
            label = f"{row['scheme']}/{row['macro_size']}/{row['role']}"
            print(f"{label:<32} {row['metric']:<18} {_fmt_value(row['value'])}")


def _parse_shape(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"shape must look like ROWSxCOLS, got {text!r}")
    rows, cols = (int(p) for p in parts)
    if rows <= 0 or cols <= 0:
        raise ValueError(f"shape dimensions must be positive, got {text!r}")
    return rows, cols


def _scheme_config(args: argparse.Namespace, scheme: str) -> SchemeConfig:
    return SchemeConfig(
        SCHEME_NAMES[scheme],
        macro_size=args.macro_size,
        mbs_mode=args.mbs_mode,
        augment_static=not getattr(args, "no_augment_static", False),
    )


def _generator_spec(args: argparse.Namespace) -> GeneratorSpec:
    return GeneratorSpec(
        DIST_NAMES[args.dist],
        _parse_shape(args.shape),
        args.seed,
        dof=args.dof,
        rate=args.rate,
        magnitude=args.magnitude,
    )


def _add_generator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dist", choices=sorted(DIST_NAMES), default="gaussian")
    p.add_argument("--shape", default="128x128", help="ROWSxCOLS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dof", type=float, default=4.0, help="student-t degrees of freedom")
    p.add_argument("--rate", type=float, default=0.01, help="outlier rate")
    p.add_argument("--magnitude", type=float, default=100.0, help="outlier boost")


def _add_scheme_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheme", choices=sorted(SCHEME_NAMES), required=True)
    p.add_argument("--macro-size", type=int, default=128)
    p.add_argument("--mbs-mode", choices=("exact", "lut"), default="exact")
    p.add_argument("--no-augment-static", action="store_true")


def cmd_gen(args: argparse.Namespace) -> int:
    save_tensor(generate_tensor(_generator_spec(args)), args.out)
    return 0


def cmd_quantize(args: argparse.Namespace) -> int:
    t = load_tensor(getattr(args, "in"))
    q = quantize_tensor(t, _scheme_config(args, args.scheme))
    save_quant(q, args.out)
    return 0


def cmd_dequantize(args: argparse.Namespace) -> int:
    q = load_quant(getattr(args, "in"))
    save_tensor(dequantize_tensor(q), args.out)
    return 0


def cmd_qsnr(args: argparse.Namespace) -> int:
    cfg = _scheme_config(args, args.scheme)
    if args.ref is not None:
        ref = load_tensor(args.ref)
        q = quantize_tensor(ref, cfg)
        report = qsnr_tensor(ref, dequantize_tensor(q))
        flush = flush_to_zero_rate(ref, q)
        role = "tensor"
        n = 1
        mean_db = report.qsnr_db
        extra = [("mse", report.mse), ("signal_power", report.signal_power)]
    else:
        spec = _generator_spec(args)
        mean_db, flush, mse_total, signal_total = _evaluate_point(spec, args.n, cfg)
        role = spec.distribution
        n = args.n
        extra = [("mse", mse_total), ("signal_power", signal_total)]
    rows = [
        {"scheme": args.scheme, "macro_size": args.macro_size, "role": role,
         "metric": "qsnr_db", "value": mean_db},
        {"scheme": args.scheme, "macro_size": args.macro_size, "role": role,
         "metric": "flush_rate", "value": flush},
        {"scheme": args.scheme, "macro_size": args.macro_size, "role": role,
         "metric": "n_tensors", "value": n},
    ] + [
        {"scheme": args.scheme, "macro_size": args.macro_size, "role": role,
         "metric": k, "value": v}
        for k, v in extra
    ]
    _emit_metrics(rows, args.format)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    schemes = [SCHEME_NAMES[s] for s in args.schemes.split(",")]
    macro_sizes = [int(m) for m in args.macro_sizes.split(",")]
    spec = GeneratorSpec("gaussian", _parse_shape(args.shape), args.seed)
    result = ablation_sweep(spec, macro_sizes, schemes, n=args.n, mbs_mode=args.mbs_mode)
    rows = []
    for r in result.rows:
        base = {"scheme": r.scheme, "macro_size": r.macro_size, "role": r.role}
        rows.append({**base, "metric": "mean_qsnr_db", "value": r.mean_qsnr_db})
        rows.append({**base, "metric": "mean_flush_rate", "value": r.mean_flush_rate})
    _emit_metrics(rows, args.format)
    return 0


def cmd_gemm(args: argparse.Namespace) -> int:
    a = load_tensor(args.a)
    b = load_tensor(args.b)
    aq = quantize_tensor(a, _scheme_config(args, args.scheme_a))
    bq = quantize_tensor(b, _scheme_config(args, args.scheme_b))
    cfg = TileConfig(args.tm, args.tn, args.tk)
    c = matmul_quantized(aq, bq, cfg)
    print(f"shape: {c.shape[0]}x{c.shape[1]}")
    if args.out is not None:
        save_tensor(c, args.out)
    if args.verify:
        oracle = matmul_reference(dequantize_tensor(aq), dequantize_tensor(bq))
        divergence = max_ulp_divergence(c, oracle)
        print(f"max divergence: {divergence}")
        if divergence != 0:
            return 2
    return 0


def cmd_roofline(args: argparse.Namespace) -> int:
    report = roofline_overhead(
        TileConfig(args.tm, args.tn, args.tk), args.sigma_bytes, args.out_bytes
    )
    rows = [
        {"scheme": "", "macro_size": args.tk, "role": "tile",
         "metric": "compute_ratio", "value": report.compute_ratio},
        {"scheme": "", "macro_size": args.tk, "role": "tile",
         "metric": "traffic_ratio", "value": report.traffic_ratio},
    ]
    _emit_metrics(rows, args.format)
    return 0


def cmd_lut_dump(args: argparse.Namespace) -> int:
    lut = build_error_lut(default_candidates())
    if args.format == "json":
        payload = {
            "candidates": list(lut.candidates),
            "subnormal": [[float(x) for x in row] for row in lut.entries[0]],
            "normal": [[float(x) for x in row] for row in lut.entries[1]],
        }
        text = json.dumps(payload, sort_keys=True)
    else:
        lines = ["regime,m8,bin,value"]
        for regime_idx, regime in enumerate(("subnormal", "normal")):
            for j, m in enumerate(lut.candidates):
                for b in range(lut.entries.shape[2]):
                    lines.append(
                        f"{regime},{m},{b},{_fmt_value(float(lut.entries[regime_idx, j, b]))}"
                    )
        text = "\n".join(lines)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mxq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a seeded synthetic tensor")
    _add_generator_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("quantize", help="quantize a tensor container")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    _add_scheme_flags(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct a tensor container")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("qsnr", help="QSNR and flush-to-zero report")
    p.add_argument("--ref", help="reference tensor file (omit to generate)")
    p.add_argument("--n", type=int, default=1, help="tensors to average (generated mode)")
    _add_generator_flags(p)
    _add_scheme_flags(p)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_qsnr)

    p = sub.add_parser("sweep", help="scheme x macro-size x role sweep")
    p.add_argument("--schemes", default="mx16,mx16-oas,mbs-s,mbs-d")
    p.add_argument("--macro-sizes", default="32,64,128,256,512")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--shape", default="128x256")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mbs-mode", choices=("exact", "lut"), default="exact")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gemm", help="quantized matrix product A @ B.T")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--scheme-a", choices=sorted(SCHEME_NAMES), required=True)
    p.add_argument("--scheme-b", choices=sorted(SCHEME_NAMES), required=True)
    p.add_argument("--macro-size", type=int, default=128)
    p.add_argument("--mbs-mode", choices=("exact", "lut"), default="exact")
    p.add_argument("--no-augment-static", action="store_true")
    p.add_argument("--tm", type=int, default=128)
    p.add_argument("--tn", type=int, default=128)
    p.add_argument("--tk", type=int, default=128)
    p.add_argument("--verify", action="store_true",
                   help="compare against the dequantize-first oracle")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gemm)

    p = sub.add_parser("roofline", help="scale-application overhead ratios")
    p.add_argument("--tm", type=int, default=128)
    p.add_argument("--tn", type=int, default=128)
    p.add_argument("--tk", type=int, default=128)
    p.add_argument("--sigma-bytes", type=int, default=2)
    p.add_argument("--out-bytes", type=int, default=4)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(func=cmd_roofline)

    p = sub.add_parser("lut-dump", help="dump the error lookup table")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_lut_dump)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
        # Surface EPIPE here, inside the handler's reach, rather than at
        # the interpreter's shutdown flush.
        sys.stdout.flush()
        return rc
    except BrokenPipeError:
        # Downstream consumer (e.g. `| head`) closed the stream; point
        # stdout at devnull so the interpreter's final flush stays quiet.
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
