"""Fidelity metrics, synthetic tensor generators, and sweep harness.

QSNR is the decibel ratio of reference signal power to quantization error
power, both accumulated as 64-bit Frobenius norms. Synthetic generators
stand in for real model tensors: heavy-tailed draws ("activation-like")
reproduce the outlier structure that block scaling reacts to, Gaussian
draws ("weight-like") the smoother case. The sweep harness crosses
schemes, macro-block widths, and the two roles into a flat result table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .gemm import matmul_quantized, matmul_reference
from .quantize import (
    QuantizedTensor,
    SchemeConfig,
    Variant,
    dequantize_tensor,
    quantize_tensor,
)

__all__ = [
    "QsnrReport",
    "GeneratorSpec",
    "ScaleSpanStats",
    "SweepRow",
    "SweepResult",
    "qsnr_tensor",
    "qsnr_matmul",
    "flush_to_zero_rate",
    "scale_exponent_span",
    "generate_tensor",
    "mean_qsnr",
    "ablation_sweep",
    "activation_like",
    "weight_like",
]

DISTRIBUTIONS = ("gaussian", "lognormal", "student_t", "gaussian_with_outliers")


@dataclass(frozen=True)
class QsnrReport:
    """Signal-to-quantization-noise measurement.

    ``signal_power`` and ``mse`` are summed squared Frobenius norms (of
    the reference and of the error). For averaged reports (n_tensors > 1)
    ``qsnr_db`` is the arithmetic mean of per-tensor dB values and the two
    power fields hold totals, so the log identity
    qsnr_db = 10*log10(signal_power/mse) applies only at n_tensors = 1.
    A zero-error measurement reports the +inf sentinel.
    """

    qsnr_db: float
    mse: float
    signal_power: float
    n_tensors: int = 1


@dataclass(frozen=True)
class ScaleSpanStats:
    """Spread of the stored power-of-two block-scale exponents."""

    max_exponent: int
    min_exponent: int
    within_2pow15_fraction: float
    within_e4m3_span_fraction: float


@dataclass(frozen=True)
class GeneratorSpec:
    """Seeded synthetic tensor description.

    ``dof`` applies to student_t; ``rate`` and ``magnitude`` apply to
    gaussian_with_outliers (each entry is boosted by ``magnitude`` with
    probability ``rate``).
    """

    distribution: str
    shape: tuple[int, int]
    seed: int
    dof: float = 4.0
    rate: float = 0.01
    magnitude: float = 100.0

    def __post_init__(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution: {self.distribution}")
        if len(self.shape) != 2 or self.shape[0] <= 0 or self.shape[1] <= 0:
            raise ValueError(f"shape must be 2-D positive, got {self.shape}")
        if self.distribution == "student_t" and not self.dof > 0:
            raise ValueError(f"student_t needs dof > 0, got {self.dof}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"outlier rate must be in [0, 1], got {self.rate}")


def activation_like(shape: tuple[int, int], seed: int) -> GeneratorSpec:
    """Heavy-tailed stand-in for activation tensors (student-t, dof 4)."""
    return GeneratorSpec("student_t", shape, seed, dof=4.0)


def weight_like(shape: tuple[int, int], seed: int) -> GeneratorSpec:
    """Gaussian stand-in for weight tensors."""
    return GeneratorSpec("gaussian", shape, seed)


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    macro_size: int
    role: str
    mean_qsnr_db: float
    mean_flush_rate: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]


def qsnr_tensor(ref: np.ndarray, q: np.ndarray) -> QsnrReport:
    """QSNR of a reconstructed tensor against its reference, in dB.

    Args:
        ref: reference float32 tensor, not all zero.
        q: reconstructed tensor of the same shape.

    Returns:
        Report with qsnr_db = 10*log10(signal/error) and the two powers;
        zero error yields the +inf sentinel.

    Raises:
        ValueError: shape mismatch or all-zero reference.
    """
    r = np.asarray(ref, dtype=np.float32)
    x = np.asarray(q, dtype=np.float32)
    if r.shape != x.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {x.shape}")
    r64 = r.astype(np.float64)
    signal = float(np.sum(r64 * r64))
    if signal == 0.0:
        raise ValueError("reference tensor is all zero")
    diff = r64 - x.astype(np.float64)
    mse = float(np.sum(diff * diff))
    if mse == 0.0:
        return QsnrReport(math.inf, 0.0, signal)
    return QsnrReport(10.0 * math.log10(signal / mse), mse, signal)


def qsnr_matmul(
    a: np.ndarray, b: np.ndarray, aq: QuantizedTensor, bq: QuantizedTensor
) -> QsnrReport:
    """QSNR of the quantized matrix product against the reference product."""
    c_ref = matmul_reference(a, b)
    c_q = matmul_quantized(aq, bq)
    return qsnr_tensor(c_ref, c_q)


def flush_to_zero_rate(ref: np.ndarray, q: QuantizedTensor) -> float:
    """Fraction of nonzero reference elements whose code magnitude is zero.

    Returns 0.0 when the reference has no nonzero elements.

    Raises:
        ValueError: shape mismatch.
    """
    r = np.asarray(ref, dtype=np.float32)
    if r.shape != q.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {q.shape}")
    mag_idx = q.unpack_codes() & 0x7
    nonzero = r != 0
    total = int(np.count_nonzero(nonzero))
    if total == 0:
        return 0.0
    flushed = int(np.count_nonzero(nonzero & (mag_idx == 0)))
    return flushed / total


def scale_exponent_span(q: QuantizedTensor) -> ScaleSpanStats:
    """Statistics of the stored block-scale exponents.

    Reports the extreme unbiased exponents, the fraction of blocks whose
    exponent sits within 2^15 of the maximum, and the fraction within the
    18-position reach (span <= 17) of a 4-bit-exponent scale format with
    subnormals.

    Raises:
        ValueError: the variant does not store power-of-two scales.
    """
    if q.block_scales is None:
        raise ValueError(f"{q.variant.value} does not store power-of-two block scales")
    exps = q.block_scales.astype(np.int64) - 127
    max_e = int(exps.max())
    min_e = int(exps.min())
    span = max_e - exps
    return ScaleSpanStats(
        max_exponent=max_e,
        min_exponent=min_e,
        within_2pow15_fraction=float(np.mean(span <= 15)),
        within_e4m3_span_fraction=float(np.mean(span <= 17)),
    )


def generate_tensor(spec: GeneratorSpec) -> np.ndarray:
    """Draw a reproducible float32 tensor from a ``GeneratorSpec``.

    The same ``GeneratorSpec`` always produces the same bits: one generator
    seeded from ``spec.seed`` drives all draws in a fixed order.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    if spec.distribution == "gaussian":
        t = rng.standard_normal(spec.shape)
    elif spec.distribution == "lognormal":
        t = rng.lognormal(0.0, 1.0, spec.shape)
    elif spec.distribution == "student_t":
        t = rng.standard_t(spec.dof, spec.shape)
    else:  # gaussian_with_outliers
        t = rng.standard_normal(spec.shape)
        mask = rng.random(spec.shape) < spec.rate
        t = np.where(mask, t * spec.magnitude, t)
    return np.ascontiguousarray(t, dtype=np.float32)


def _evaluate_point(
    spec: GeneratorSpec, n: int, cfg: SchemeConfig
) -> tuple[float, float, float, float]:
    """Per-tensor means of (qsnr dB, flush rate) plus total powers."""
    db_sum = 0.0
    flush_sum = 0.0
    mse_total = 0.0
    signal_total = 0.0
    for i in range(n):
        t = generate_tensor(replace(spec, seed=spec.seed + i))
        q = quantize_tensor(t, cfg)
        report = qsnr_tensor(t, dequantize_tensor(q))
        db_sum += report.qsnr_db
        flush_sum += flush_to_zero_rate(t, q)
        mse_total += report.mse
        signal_total += report.signal_power
    return db_sum / n, flush_sum / n, mse_total, signal_total


def mean_qsnr(spec: GeneratorSpec, n: int, cfg: SchemeConfig) -> QsnrReport:
    """Mean per-tensor QSNR over n seeded tensors (seeds spec.seed + i).

    The mean is the arithmetic mean of the per-tensor dB values; the
    report's power fields accumulate totals across tensors.

    Raises:
        ValueError: n < 1.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    mean_db, _, mse_total, signal_total = _evaluate_point(spec, n, cfg)
    return QsnrReport(mean_db, mse_total, signal_total, n_tensors=n)


def ablation_sweep(
    spec: GeneratorSpec,
    macro_sizes: Sequence[int],
    schemes: Sequence[Variant],
    n: int = 8,
    mbs_mode: str = "exact",
) -> SweepResult:
    """Cross schemes x macro widths x {activation-like, weight-like}.

    ``spec`` contributes the shape and base seed; each role fixes its own
    distribution. Every combination is evaluated over n seeded tensors.

    Raises:
        ValueError: a macro size is not a positive multiple of 16.
    """
    for ms in macro_sizes:
        if ms <= 0 or ms % 16 != 0:
            raise ValueError(f"invalid macro size: {ms}")
    roles = (
        ("activation_like", activation_like(spec.shape, spec.seed)),
        ("weight_like", weight_like(spec.shape, spec.seed)),
    )
    rows = []
    for role_name, role_spec in roles:
        for variant in schemes:
            for ms in macro_sizes:
                if variant is Variant.OCP32 and ms % 32 != 0:
                    raise ValueError(f"invalid macro size for ocp32: {ms}")
                cfg = SchemeConfig(variant, macro_size=ms, mbs_mode=mbs_mode)
                mean_db, mean_flush, _, _ = _evaluate_point(role_spec, n, cfg)
                rows.append(SweepRow(variant.value, ms, role_name, mean_db, mean_flush))
    return SweepResult(tuple(rows))
