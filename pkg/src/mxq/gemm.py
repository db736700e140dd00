"""Functional tiled matrix multiplication over quantized operands.

``matmul_reference`` is the deterministic oracle: C = A @ B.T with 64-bit
accumulation in ascending-k order, rounded to float32 once at the end.
``matmul_quantized`` walks the packed 4-bit operands tile by tile, decoding
each k-chunk straight from the packed bytes with the same per-element
arithmetic the dequantizer uses, and accumulates partial products in the
same fixed k order — so its output is bit-identical to dequantizing both
operands and calling the reference, for every variant and tile shape.

``roofline_overhead`` reports the arithmetic and memory-traffic cost of the
per-chunk scale application relative to the 4-bit tensor work itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantize import QuantizedTensor, _dequantize_values, macro_segments

__all__ = [
    "TileConfig",
    "OverheadReport",
    "matmul_reference",
    "matmul_quantized",
    "roofline_overhead",
    "max_ulp_divergence",
]


@dataclass(frozen=True)
class TileConfig:
    """Output tile dimensions (t_m x t_n) and k-chunk length t_k."""

    t_m: int = 128
    t_n: int = 128
    t_k: int = 128

    def __post_init__(self) -> None:
        if self.t_m <= 0 or self.t_n <= 0 or self.t_k <= 0:
            raise ValueError(f"tile dims must be positive, got {self}")


@dataclass(frozen=True)
class OverheadReport:
    """Scale-application cost relative to the 4-bit tensor-core work.

    ``compute_ratio`` counts the one multiply and one add per output
    element at each chunk boundary against the 2*t_k flops the chunk
    contributes; ``traffic_ratio`` counts the per-row/per-column scale
    bytes against the output tile bytes. Both are fractions in [0, 1]
    for all practical tile sizes.
    """

    compute_ratio: float
    traffic_ratio: float


def _as_f32_matrix(t: np.ndarray, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(t, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C = A @ B.T in float64, k ascending, one final rounding to float32.

    Args:
        a: M x K float32 matrix.
        b: N x K float32 matrix (transposed product).

    Returns:
        M x N float32 product.

    Raises:
        ValueError: inner dimensions differ.
    """
    a32 = _as_f32_matrix(a, "a")
    b32 = _as_f32_matrix(b, "b")
    if a32.shape[1] != b32.shape[1]:
        raise ValueError(f"inner dimensions differ: {a32.shape} vs {b32.shape}")
    a64 = a32.astype(np.float64)
    b64 = b32.astype(np.float64)
    c = np.zeros((a32.shape[0], b32.shape[0]))
    for k in range(a32.shape[1]):
        c += np.outer(a64[:, k], b64[:, k])
    return c.astype(np.float32)


def _chunk_factors(q: QuantizedTensor, k0: int, k1: int) -> np.ndarray | None:
    """Mantissa factors per element column for k in [k0, k1), or None."""
    if q.mbs_mantissas is None:
        return None
    factors = q.macro_factors()
    out = np.empty((q.shape[0], k1 - k0))
    for i, (start, stop) in enumerate(macro_segments(q.shape[1], q.macro_size)):
        lo, hi = max(start, k0), min(stop, k1)
        if lo < hi:
            out[:, lo - k0 : hi - k0] = factors[:, i : i + 1]
    return out


def _decode_chunk(q: QuantizedTensor, rows: slice, k0: int, k1: int) -> np.ndarray:
    """Decode rows x [k0, k1) of a packed operand to float32.

    Slices the packed nibbles, block scales, and macro factors directly at
    their stored offsets; the element arithmetic is the shared dequantize
    formula, so chunk decoding rounds exactly like full dequantization.
    """
    packed = q.codes[rows, k0 // 2 : k1 // 2]
    codes = np.empty(packed.shape[:1] + (k1 - k0,), dtype=np.uint8)
    codes[:, 0::2] = packed & 0xF
    codes[:, 1::2] = packed >> 4
    bs = q.block_size
    d = q.block_dequant_values()[rows, k0 // bs : k1 // bs]
    d_el = np.repeat(d, bs, axis=1)
    factor = _chunk_factors(q, k0, k1)
    if factor is not None:
        factor = factor[rows]
    return _dequantize_values(codes, d_el, factor, q.tensor_scale)


def _validate_chunking(q: QuantizedTensor, t_k: int, name: str) -> None:
    if t_k % q.block_size != 0:
        raise ValueError(
            f"t_k {t_k} is not a multiple of operand {name}'s block size {q.block_size}"
        )
    if q.mbs_mantissas is not None and t_k % q.macro_size != 0:
        raise ValueError(
            f"t_k {t_k} is not a multiple of operand {name}'s macro size {q.macro_size}"
        )


def matmul_quantized(
    aq: QuantizedTensor, bq: QuantizedTensor, cfg: TileConfig = TileConfig()
) -> np.ndarray:
    """C = dequant(aq) @ dequant(bq).T, computed tile by tile.

    Output tiles are visited in row-major order and accumulated in float64
    over ascending k-chunks; within a chunk the per-16-block products fold
    in ascending k as well, so every output element sees exactly the
    summation order of :func:`matmul_reference`. Operand variants may be
    mixed freely (e.g. static-mantissa activations against
    dynamic-mantissa weights).

    Raises:
        ValueError: K mismatch, or t_k misaligned with an operand's block
            or macro layout.
    """
    if aq.shape[1] != bq.shape[1]:
        raise ValueError(f"operands disagree on K: {aq.shape} vs {bq.shape}")
    _validate_chunking(aq, cfg.t_k, "a")
    _validate_chunking(bq, cfg.t_k, "b")
    m, k_total = aq.shape
    n = bq.shape[0]
    c = np.empty((m, n), dtype=np.float32)
    chunks = [(k0, min(k0 + cfg.t_k, k_total)) for k0 in range(0, k_total, cfg.t_k)]
    for i0 in range(0, m, cfg.t_m):
        i1 = min(i0 + cfg.t_m, m)
        for j0 in range(0, n, cfg.t_n):
            j1 = min(j0 + cfg.t_n, n)
            acc = np.zeros((i1 - i0, j1 - j0))
            for k0, k1 in chunks:
                a64 = _decode_chunk(aq, slice(i0, i1), k0, k1).astype(np.float64)
                b64 = _decode_chunk(bq, slice(j0, j1), k0, k1).astype(np.float64)
                for kk in range(k1 - k0):
                    acc += np.outer(a64[:, kk], b64[:, kk])
            c[i0:i1, j0:j1] = acc.astype(np.float32)
    return c


def roofline_overhead(
    cfg: TileConfig, sigma_bytes: int = 2, out_bytes: int = 4
) -> OverheadReport:
    """Relative cost of per-chunk scale application for one output tile.

    Per chunk, each of the t_m*t_n outputs takes one multiply and one add
    (2 flops) against 2*t_k flops of dot-product work:
    compute_ratio = 2/t_k. The tile reads t_m + t_n scale entries of
    ``sigma_bytes`` against t_m*t_n outputs of ``out_bytes``:
    traffic_ratio = (t_m+t_n)*sigma_bytes / (t_m*t_n*out_bytes).

    Raises:
        ValueError: non-positive byte widths.
    """
    if sigma_bytes <= 0 or out_bytes <= 0:
        raise ValueError("byte widths must be positive")
    compute = 2.0 / cfg.t_k
    traffic = ((cfg.t_m + cfg.t_n) * sigma_bytes) / (cfg.t_m * cfg.t_n * out_bytes)
    return OverheadReport(compute_ratio=compute, traffic_ratio=traffic)


def max_ulp_divergence(a: np.ndarray, b: np.ndarray) -> int:
    """Largest ulp distance between two float32 arrays of the same shape.

    Bit patterns are mapped to a monotone integer line (negative floats
    reflected below zero) so the distance counts representable values
    between the two, with 0 meaning bit-identical up to -0.0 == +0.0.
    """
    x = np.ascontiguousarray(a, dtype=np.float32)
    y = np.ascontiguousarray(b, dtype=np.float32)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")

    def key(v: np.ndarray) -> np.ndarray:
        bits = v.view(np.uint32).astype(np.int64)
        return np.where(bits & 0x80000000, 0x80000000 - bits, bits)

    if x.size == 0:
        return 0
    return int(np.max(np.abs(key(x) - key(y))))
