"""Block and macro-block 4-bit quantization schemes.

Variants
--------
* ``OCP32``    -- blocks of 32 sharing a power-of-two scale that maps the
  block maximum into (4, 8] (open at 8 when the maximum is an exact power
  of two; see the note on ``block_scale_ocp``).
* ``MX16``     -- blocks of 16, scale from the largest power of two not
  exceeding ``6 / alpha_max``, mapping the maximum into (3, 6].
* ``MX16_OAS`` -- MX16 plus overflow-aware scaling: blocks whose scaled
  maximum lands at or below 3.5 double their scale, trading a bounded
  saturation error at the top for resolution at the bottom.
* ``MBS_S``    -- per macro block (default 1x128), an 8-bit mantissa factor
  derived from the macro maximum stretches values toward full range before
  MX16_OAS quantization of each sub-block.
* ``MBS_D``    -- like MBS_S but the factor is chosen by minimizing the
  macro block's sum of squared errors over a candidate set, either exactly
  or through a precomputed error lookup table.
* ``NVFP4``    -- reference scheme with a global tensor scale and per-block
  E4M3 (non power-of-two) scales.

All quantization arithmetic is pinned: the factor multiply happens in
float32, scaling by power-of-two quantization scales happens exactly in
float64, and dequantized elements are rounded to float32 once at the end.
The GEMM in :mod:`mxq.gemm` reproduces the same per-element arithmetic so
quantized matrix products match the dequantize-then-multiply path
bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .formats import (
    E4M3_TABLE,
    E8M0_BIAS,
    E8M0Scale,
    Mantissa8,
    decode_e2m1_array,
    encode_e2m1_array,
    encode_e4m3_array,
    extract_mantissa8,
)

__all__ = [
    "Variant",
    "CandidateSet",
    "ErrorLut",
    "SchemeConfig",
    "QuantizedTensor",
    "default_candidates",
    "block_scale_ocp",
    "block_scale_16",
    "quantize_block",
    "mbs_static_mantissa",
    "mbs_dynamic_exact",
    "build_error_lut",
    "mbs_dynamic_lut",
    "quantize_tensor",
    "quantize_nvfp4",
    "dequantize_tensor",
    "macro_segments",
]


class Variant(str, Enum):
    OCP32 = "ocp32"
    MX16 = "mx16"
    MX16_OAS = "mx16_oas"
    MBS_S = "mbs_s"
    MBS_D = "mbs_d"
    NVFP4 = "nvfp4"


MBS_VARIANTS = (Variant.MBS_S, Variant.MBS_D)

# Sweepable macro-block widths.
MACRO_SIZES = (32, 64, 128, 256, 512)


@dataclass(frozen=True)
class CandidateSet:
    """Ordered mantissa-byte candidates evaluated by MBS-Dynamic."""

    mantissas: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.mantissas) == 0:
            raise ValueError("candidate set is empty")
        if len(set(self.mantissas)) != len(self.mantissas):
            raise ValueError("candidate set contains duplicates")
        if 0 not in self.mantissas:
            raise ValueError("candidate set must contain the identity factor m8=0")
        for m in self.mantissas:
            if not 0 <= m <= 255:
                raise ValueError(f"mantissa byte out of range: {m}")


def default_candidates() -> CandidateSet:
    """The 16 uniformly spaced mantissa bytes {0, 16, 32, ..., 240}."""
    return CandidateSet(tuple(range(0, 256, 16)))


# Lookup-table geometry: two regimes of 64 linear bins each.
LUT_BINS = 64
LUT_SUBNORMAL_EDGES = np.arange(LUT_BINS) / LUT_BINS            # [0, 1)
LUT_NORMAL_EDGES = 1.0 + np.arange(LUT_BINS) * 7.0 / LUT_BINS   # [1, 8)


@dataclass(frozen=True)
class ErrorLut:
    """Squared-relative-error table: [regime 2][candidate 16][bin 64], fp16."""

    entries: np.ndarray
    candidates: tuple[int, ...]
    subnormal_edges: np.ndarray = field(default_factory=lambda: LUT_SUBNORMAL_EDGES)
    normal_edges: np.ndarray = field(default_factory=lambda: LUT_NORMAL_EDGES)

    def __post_init__(self) -> None:
        if self.entries.shape != (2, 16, LUT_BINS) or self.entries.dtype != np.float16:
            raise ValueError("ErrorLut entries must be float16 of shape (2, 16, 64)")


@dataclass(frozen=True)
class SchemeConfig:
    """Quantization scheme selection and its knobs.

    Args:
        variant: which scheme to run.
        block_size: elements sharing one scale; fixed per variant (32 for
            OCP32, 16 otherwise) and validated if given explicitly.
        macro_size: elements sharing one mantissa factor (MBS variants);
            must be a multiple of block_size.
        mbs_mode: "exact" (SSE search) or "lut" (table-estimated search),
            MBS_D only.
        candidates: candidate mantissas for MBS_D; defaults to the 16
            uniform bytes.
        augment_static: MBS_D exact mode also evaluates each macro block's
            static mantissa, making dynamic selection never worse than the
            static scheme. Ignored in lut mode (the table layout is fixed
            at 16 candidates).
    """

    variant: Variant
    block_size: Optional[int] = None
    macro_size: int = 128
    mbs_mode: str = "exact"
    candidates: Optional[CandidateSet] = None
    augment_static: bool = True

    def __post_init__(self) -> None:
        expected = 32 if self.variant is Variant.OCP32 else 16
        if self.block_size is None:
            object.__setattr__(self, "block_size", expected)
        elif self.block_size != expected:
            raise ValueError(
                f"{self.variant.value} requires block_size {expected}, got {self.block_size}"
            )
        if self.macro_size <= 0 or self.macro_size % self.block_size != 0:
            raise ValueError(
                f"macro_size {self.macro_size} is not a positive multiple of block_size {self.block_size}"
            )
        if self.mbs_mode not in ("exact", "lut"):
            raise ValueError(f"unknown mbs_mode: {self.mbs_mode}")
        if self.candidates is None:
            object.__setattr__(self, "candidates", default_candidates())


@dataclass(frozen=True)
class QuantizedTensor:
    """A quantized 2-D tensor and everything needed to reconstruct it.

    ``codes`` packs two 4-bit element codes per byte (even column in the
    low nibble). ``block_scales`` stores one dequantization-scale byte per
    1 x block_size block: an E8M0 biased exponent for the power-of-two
    variants, or an E4M3 byte in ``e4m3_scales`` for NVFP4. MBS variants
    add one mantissa byte per macro block; NVFP4 adds a global
    ``tensor_scale``.
    """

    variant: Variant
    shape: tuple[int, int]
    block_size: int
    macro_size: int
    codes: np.ndarray                        # (rows, cols//2) uint8
    block_scales: Optional[np.ndarray]       # (rows, cols//block_size) uint8 E8M0
    e4m3_scales: Optional[np.ndarray]        # (rows, cols//16) uint8, NVFP4 only
    mbs_mantissas: Optional[np.ndarray]      # (rows, n_macros) uint8, MBS only
    tensor_scale: Optional[float]            # NVFP4 only

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented

        def arr_eq(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return bool(np.array_equal(a, b))

        return (
            self.variant == other.variant
            and self.shape == other.shape
            and self.block_size == other.block_size
            and self.macro_size == other.macro_size
            and arr_eq(self.codes, other.codes)
            and arr_eq(self.block_scales, other.block_scales)
            and arr_eq(self.e4m3_scales, other.e4m3_scales)
            and arr_eq(self.mbs_mantissas, other.mbs_mantissas)
            and self.tensor_scale == other.tensor_scale
        )

    @property
    def n_macros(self) -> int:
        return -(-self.shape[1] // self.macro_size)

    def unpack_codes(self) -> np.ndarray:
        """Unpack to one uint8 code per element, shape == self.shape."""
        rows, cols = self.shape
        out = np.empty((rows, cols), dtype=np.uint8)
        out[:, 0::2] = self.codes & 0xF
        out[:, 1::2] = self.codes >> 4
        return out

    def block_dequant_values(self) -> np.ndarray:
        """Per-block dequantization scale D as float64, (rows, n_blocks).

        Raises:
            ValueError: a stored scale byte is not a valid code.
        """
        if self.variant is Variant.NVFP4:
            vals = E4M3_TABLE[self.e4m3_scales]
            if np.any(np.isnan(vals)):
                raise ValueError("corrupt block scale: E4M3 NaN code")
            return vals
        if np.any(self.block_scales == 255):
            raise ValueError("corrupt block scale: E8M0 code 255 is reserved")
        return np.ldexp(1.0, self.block_scales.astype(np.int64) - E8M0_BIAS)

    def macro_factors(self) -> Optional[np.ndarray]:
        """Per-macro-block mantissa factors 1 + m8/256, (rows, n_macros)."""
        if self.mbs_mantissas is None:
            return None
        return 1.0 + self.mbs_mantissas.astype(np.float64) / 256.0


def macro_segments(cols: int, macro_size: int) -> list[tuple[int, int]]:
    """Column ranges of the macro blocks in a row: full-width macro blocks
    plus one trailing partial block when cols is not a multiple."""
    edges = list(range(0, cols, macro_size)) + [cols]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


# ---------------------------------------------------------------------------
# Block scales
# ---------------------------------------------------------------------------


def _floor_log2(x: np.ndarray) -> np.ndarray:
    """Exact floor(log2 x) for positive floats via exponent extraction."""
    _, e = np.frexp(x)
    return e - 1


def _dequant_exponents_16(alpha: np.ndarray, oas: bool) -> np.ndarray:
    """Biased E8M0 exponents of the per-block dequant scale D = 1/SF.

    ``alpha`` holds per-block maxima (float64). SF is the largest power of
    two with alpha*SF <= 6; with ``oas``, blocks whose scaled maximum lands
    at or below 3.5 double SF. All-zero blocks get D = 1.
    """
    safe = np.where(alpha > 0, alpha, 1.0)
    sf_exp = _floor_log2(6.0 / safe)
    if oas:
        # alpha * 2**sf_exp is exact, so the trigger comparison is exact.
        sf_exp = np.where(safe * np.ldexp(1.0, sf_exp) <= 3.5, sf_exp + 1, sf_exp)
    biased = np.clip(-sf_exp + E8M0_BIAS, 0, 254)
    return np.where(alpha > 0, biased, E8M0_BIAS).astype(np.uint8)


def _dequant_exponents_ocp(alpha: np.ndarray) -> np.ndarray:
    """Biased E8M0 exponents of D = 2^(floor(log2 alpha) - 2) per block."""
    safe = np.where(alpha > 0, alpha, 1.0)
    d_exp = _floor_log2(safe) - 2
    biased = np.clip(d_exp + E8M0_BIAS, 0, 254)
    return np.where(alpha > 0, biased, E8M0_BIAS).astype(np.uint8)


def _validate_block(block: np.ndarray, size: int) -> np.ndarray:
    arr = np.asarray(block, dtype=np.float64)
    if arr.shape != (size,):
        raise ValueError(f"expected a block of {size} elements, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("block contains non-finite elements")
    return arr


def block_scale_ocp(block: np.ndarray) -> E8M0Scale:
    """Dequantization scale for a 32-element block, D = 2^(floor(log2 a)-2).

    The scaled maximum a/D lands in [4, 8): the interval is closed at 4
    (exact powers of two map there) and open at 8. An all-zero block
    returns D = 1.
    """
    arr = _validate_block(block, 32)
    alpha = np.max(np.abs(arr))
    biased = int(_dequant_exponents_ocp(np.asarray([alpha]))[0])
    clamped = alpha > 0 and biased != _floor_log2(np.asarray([alpha]))[0] - 2 + E8M0_BIAS
    return E8M0Scale(biased, clamped=bool(clamped))


def block_scale_16(block: np.ndarray, oas: bool = False) -> E8M0Scale:
    """Dequantization scale for a 16-element block.

    The quantization scale SF is the largest power of two keeping the
    block maximum at or below 6, so the scaled maximum lands in (3, 6].
    With ``oas``, a scaled maximum at or below 3.5 doubles SF, moving the
    range to (3.5, 7] (saturating at 6 with a bounded, never-worse
    relative error). Returns D = 1/SF; an all-zero block returns D = 1.
    """
    arr = _validate_block(block, 16)
    alpha = np.max(np.abs(arr))
    biased = int(_dequant_exponents_16(np.asarray([alpha]), oas=oas)[0])
    if alpha > 0:
        sf_exp = _floor_log2(np.asarray([6.0 / alpha]))[0]
        if oas and alpha * np.ldexp(1.0, sf_exp) <= 3.5:
            sf_exp += 1
        clamped = biased != -sf_exp + E8M0_BIAS
    else:
        clamped = False
    return E8M0Scale(biased, clamped=bool(clamped))


def quantize_block(
    block: np.ndarray, sf: float, factor: Optional[Mantissa8] = None
) -> np.ndarray:
    """Quantize one block: codes for encode(x * factor * sf), saturating.

    The factor multiply is performed in float32 (matching the tensor
    pipeline); the power-of-two scale multiply is exact.

    Args:
        block: finite elements (any length).
        sf: quantization scale, positive.
        factor: optional mantissa factor; identity when omitted.

    Returns:
        uint8 array of 4-bit codes.
    """
    if not sf > 0:
        raise ValueError(f"sf must be positive, got {sf}")
    arr = np.asarray(block, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError("block contains non-finite elements")
    if factor is not None:
        arr = (arr * np.float32(factor.factor)).astype(np.float32)
    scaled = arr.astype(np.float64) * float(sf)
    return encode_e2m1_array(scaled, saturate=True)


# ---------------------------------------------------------------------------
# Macro-block scaling
# ---------------------------------------------------------------------------


def mbs_static_mantissa(alpha_max_128: float) -> Mantissa8:
    """Static mantissa byte: top 8 mantissa bits of 6.0/alpha (float32).

    A zero macro maximum returns m8 = 0.
    """
    if alpha_max_128 == 0:
        return Mantissa8(0)
    if not (np.isfinite(alpha_max_128) and alpha_max_128 > 0):
        raise ValueError(f"macro maximum must be positive finite, got {alpha_max_128}")
    # The ratio is formed in float32, mirroring the bit-mask extraction.
    ratio = np.float32(6.0) / np.float32(alpha_max_128)
    return extract_mantissa8(float(ratio))


def _static_mantissas(alpha: np.ndarray) -> np.ndarray:
    """Vectorized mbs_static_mantissa for an array of macro maxima."""
    safe = np.where(alpha > 0, alpha, 6.0).astype(np.float32)
    ratio = (np.float32(6.0) / safe).astype(np.float32)
    bits = ratio.view(np.uint32)
    m8 = ((bits & np.uint32(0x007F8000)) >> np.uint32(15)).astype(np.uint8)
    return np.where(alpha > 0, m8, 0).astype(np.uint8)


def _quantize_macros(macros: np.ndarray, m8: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quantize (n, L) float32 macro rows under per-row mantissa bytes.

    Returns (codes (n, L) uint8, biased scale exponents (n, L/16) uint8).
    """
    n, length = macros.shape
    factor32 = (1.0 + m8.astype(np.float64) / 256.0).astype(np.float32)
    y = (macros * factor32[:, None]).astype(np.float32)
    blocks = y.reshape(n, length // 16, 16).astype(np.float64)
    alpha = np.max(np.abs(blocks), axis=2)
    biased = _dequant_exponents_16(alpha, oas=True)
    sf = np.ldexp(1.0, E8M0_BIAS - biased.astype(np.int64))
    scaled = blocks * sf[:, :, None]
    codes = encode_e2m1_array(scaled.reshape(n, length), saturate=True)
    return codes, biased


def _dequantize_values(codes: np.ndarray, d_per_element: np.ndarray,
                       factor_per_element: Optional[np.ndarray] = None,
                       tensor_scale: Optional[float] = None) -> np.ndarray:
    """The pinned element formula: float32(decode * D / factor * s_t).

    All arithmetic runs in float64 with a single rounding to float32 at
    the end; the GEMM chunk loader uses this same routine so both paths
    round identically.
    """
    vals = decode_e2m1_array(codes) * d_per_element
    if factor_per_element is not None:
        vals = vals / factor_per_element
    if tensor_scale is not None:
        vals = vals * tensor_scale
    return vals.astype(np.float32)


def _macro_sse(macros: np.ndarray, m8: np.ndarray) -> np.ndarray:
    """Round-trip SSE per macro row for the given mantissa bytes."""
    codes, biased = _quantize_macros(macros, m8)
    n, length = macros.shape
    d = np.ldexp(1.0, biased.astype(np.int64) - E8M0_BIAS)
    d_el = np.repeat(d, 16, axis=1)
    factor = (1.0 + m8.astype(np.float64) / 256.0)[:, None]
    deq = _dequantize_values(codes, d_el, np.broadcast_to(factor, (n, length)))
    diff = deq.astype(np.float64) - macros.astype(np.float64)
    return np.sum(diff * diff, axis=1)


def _choose_dynamic_exact(
    macros: np.ndarray, candidates: CandidateSet, augment_static: bool
) -> np.ndarray:
    """Per-macro-row argmin-SSE mantissa byte (ties to the smallest byte)."""
    n = macros.shape[0]
    best_sse = np.full(n, np.inf)
    best_m8 = np.zeros(n, dtype=np.uint8)
    trial_lists: list[np.ndarray] = [
        np.full(n, c, dtype=np.uint8) for c in candidates.mantissas
    ]
    if augment_static:
        alpha = np.max(np.abs(macros.astype(np.float64)), axis=1)
        trial_lists.append(_static_mantissas(alpha))
    first = True
    for trial in trial_lists:
        sse = _macro_sse(macros, trial)
        if first:
            better = np.ones(n, dtype=bool)
            first = False
        else:
            better = (sse < best_sse) | ((sse == best_sse) & (trial < best_m8))
        best_sse = np.where(better, sse, best_sse)
        best_m8 = np.where(better, trial, best_m8)
    return best_m8


def mbs_dynamic_exact(macro: np.ndarray, candidates: CandidateSet) -> Mantissa8:
    """Exhaustive SSE-minimizing mantissa byte for one macro block.

    Each candidate is evaluated by running the full quantize/dequantize
    pipeline and summing squared errors against the original; the minimum
    wins, ties going to the smallest byte.
    """
    arr = np.asarray(macro, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError("macro must be one-dimensional")
    if arr.size == 0 or arr.size % 16 != 0:
        raise ValueError(f"macro length must be a positive multiple of 16, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("macro contains non-finite elements")
    m8 = _choose_dynamic_exact(arr[None, :], candidates, augment_static=False)
    return Mantissa8(int(m8[0]))


def build_error_lut(candidates: CandidateSet) -> ErrorLut:
    """Precompute squared relative errors of the saturating E2M1 grid.

    For each candidate factor and bin center v, the entry is the squared
    relative error of quantizing u = v * (1 + m8/256) on the grid with
    saturation at 6. Subnormal bins cover v in [0, 1), normal bins cover
    v in [1, 8), both uniformly with 64 bins.
    """
    if len(candidates.mantissas) != 16:
        raise ValueError(
            f"the lookup table holds exactly 16 candidates, got {len(candidates.mantissas)}"
        )
    sub_centers = LUT_SUBNORMAL_EDGES + 0.5 / LUT_BINS
    norm_centers = LUT_NORMAL_EDGES + 0.5 * 7.0 / LUT_BINS
    entries = np.empty((2, 16, LUT_BINS))
    for j, m in enumerate(candidates.mantissas):
        f = 1.0 + m / 256.0
        for regime, centers in enumerate((sub_centers, norm_centers)):
            u = centers * f
            codes = encode_e2m1_array(u, saturate=True)
            q = decode_e2m1_array(codes)
            entries[regime, j] = ((q - u) / u) ** 2
    return ErrorLut(entries.astype(np.float16), tuple(candidates.mantissas))


def _choose_dynamic_lut(
    macros: np.ndarray, lut: ErrorLut, candidates: CandidateSet
) -> np.ndarray:
    """Per-macro-row LUT-estimated argmin mantissa byte."""
    if tuple(candidates.mantissas) != lut.candidates:
        raise ValueError("lookup table was built from a different candidate set")
    n, length = macros.shape
    x64 = macros.astype(np.float64)
    weights = (x64 * x64).reshape(n, length // 16, 16)
    entries = lut.entries.astype(np.float64)
    best_cost = np.full(n, np.inf)
    best_m8 = np.zeros(n, dtype=np.uint8)
    first = True
    for j, m in enumerate(candidates.mantissas):
        trial = np.full(n, m, dtype=np.uint8)
        factor32 = np.float32(1.0 + m / 256.0)
        y = (macros * factor32).astype(np.float32)
        blocks = y.reshape(n, length // 16, 16).astype(np.float64)
        alpha = np.max(np.abs(blocks), axis=2)
        biased = _dequant_exponents_16(alpha, oas=True)
        sf = np.ldexp(1.0, E8M0_BIAS - biased.astype(np.int64))
        v = np.abs(x64.reshape(n, length // 16, 16)) * sf[:, :, None]
        subnormal = v < 1.0
        bin_sub = np.clip((v * LUT_BINS).astype(np.int64), 0, LUT_BINS - 1)
        # v >= 8 clamps into the last normal bin
        bin_norm = np.clip(((v - 1.0) * LUT_BINS / 7.0).astype(np.int64), 0, LUT_BINS - 1)
        t = np.where(subnormal, entries[0, j][bin_sub], entries[1, j][bin_norm])
        cost = np.sum(weights * t, axis=(1, 2))
        if first:
            better = np.ones(n, dtype=bool)
            first = False
        else:
            better = (cost < best_cost) | ((cost == best_cost) & (trial < best_m8))
        best_cost = np.where(better, cost, best_cost)
        best_m8 = np.where(better, trial, best_m8)
    return best_m8


def mbs_dynamic_lut(
    macro: np.ndarray, lut: ErrorLut, candidates: CandidateSet
) -> Mantissa8:
    """LUT-accelerated candidate selection for one macro block.

    Elements index the table by v = x * SF (SF from the OAS scale of the
    candidate-scaled sub-block); candidate cost is the x^2-weighted sum of
    entries, minimized with ties to the smallest byte.
    """
    arr = np.asarray(macro, dtype=np.float32)
    if arr.ndim != 1 or arr.size == 0 or arr.size % 16 != 0:
        raise ValueError(f"macro length must be a positive multiple of 16, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("macro contains non-finite elements")
    m8 = _choose_dynamic_lut(arr[None, :], lut, candidates)
    return Mantissa8(int(m8[0]))


# ---------------------------------------------------------------------------
# Tensor-level quantization
# ---------------------------------------------------------------------------


def _pack_codes(codes: np.ndarray) -> np.ndarray:
    """Pack per-element codes into bytes, even column in the low nibble."""
    return (codes[:, 0::2] | (codes[:, 1::2] << 4)).astype(np.uint8)


def _validate_tensor(t: np.ndarray, block_size: int) -> np.ndarray:
    arr = np.ascontiguousarray(t, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D tensor, got shape {arr.shape}")
    if arr.shape[1] % block_size != 0:
        raise ValueError(
            f"row length {arr.shape[1]} is not divisible by block_size {block_size}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite elements")
    return arr


def _quantize_power_of_two(t: np.ndarray, cfg: SchemeConfig) -> QuantizedTensor:
    """OCP32 / MX16 / MX16_OAS: one power-of-two scale per block."""
    rows, cols = t.shape
    bs = cfg.block_size
    blocks = t.astype(np.float64).reshape(rows, cols // bs, bs)
    alpha = np.max(np.abs(blocks), axis=2)
    if cfg.variant is Variant.OCP32:
        biased = _dequant_exponents_ocp(alpha)
    else:
        biased = _dequant_exponents_16(alpha, oas=cfg.variant is Variant.MX16_OAS)
    sf = np.ldexp(1.0, E8M0_BIAS - biased.astype(np.int64))
    scaled = blocks * sf[:, :, None]
    codes = encode_e2m1_array(scaled.reshape(rows, cols), saturate=True)
    return QuantizedTensor(
        variant=cfg.variant,
        shape=(rows, cols),
        block_size=bs,
        macro_size=cfg.macro_size,
        codes=_pack_codes(codes),
        block_scales=biased,
        e4m3_scales=None,
        mbs_mantissas=None,
        tensor_scale=None,
    )


def _quantize_mbs(t: np.ndarray, cfg: SchemeConfig) -> QuantizedTensor:
    """MBS_S / MBS_D: mantissa factor per macro block, OAS blocks inside."""
    rows, cols = t.shape
    segments = macro_segments(cols, cfg.macro_size)
    codes = np.empty((rows, cols), dtype=np.uint8)
    biased = np.empty((rows, cols // 16), dtype=np.uint8)
    mantissas = np.empty((rows, len(segments)), dtype=np.uint8)
    lut = None
    if cfg.variant is Variant.MBS_D and cfg.mbs_mode == "lut":
        lut = build_error_lut(cfg.candidates)

    # Group equal-width segments so each group quantizes in one shot; only
    # a trailing partial macro block ever differs in width.
    by_width: dict[int, list[int]] = {}
    for i, (start, stop) in enumerate(segments):
        by_width.setdefault(stop - start, []).append(i)
    for width, seg_indices in by_width.items():
        slabs = [t[:, segments[i][0]:segments[i][1]] for i in seg_indices]
        macros = np.concatenate([s.reshape(rows, 1, width) for s in slabs], axis=1)
        macros = macros.reshape(rows * len(seg_indices), width)
        if cfg.variant is Variant.MBS_S:
            alpha = np.max(np.abs(macros.astype(np.float64)), axis=1)
            m8 = _static_mantissas(alpha)
        elif cfg.mbs_mode == "exact":
            m8 = _choose_dynamic_exact(macros, cfg.candidates, cfg.augment_static)
        else:
            m8 = _choose_dynamic_lut(macros, lut, cfg.candidates)
        seg_codes, seg_biased = _quantize_macros(macros, m8)
        m8 = m8.reshape(rows, len(seg_indices))
        seg_codes = seg_codes.reshape(rows, len(seg_indices), width)
        seg_biased = seg_biased.reshape(rows, len(seg_indices), width // 16)
        for k, i in enumerate(seg_indices):
            start, stop = segments[i]
            codes[:, start:stop] = seg_codes[:, k]
            biased[:, start // 16 : stop // 16] = seg_biased[:, k]
            mantissas[:, i] = m8[:, k]

    return QuantizedTensor(
        variant=cfg.variant,
        shape=(rows, cols),
        block_size=16,
        macro_size=cfg.macro_size,
        codes=_pack_codes(codes),
        block_scales=biased,
        e4m3_scales=None,
        mbs_mantissas=mantissas,
        tensor_scale=None,
    )


def quantize_nvfp4(t: np.ndarray) -> QuantizedTensor:
    """NVFP4 reference: global tensor scale plus per-block E4M3 scales.

    The tensor scale s_t = absmax/(448*6) guarantees every block-scale
    ratio fits E4M3; an all-zero tensor gets the trivial encoding with
    s_t = 1.
    """
    arr = _validate_tensor(t, 16)
    rows, cols = arr.shape
    global_max = float(np.max(np.abs(arr.astype(np.float64))))
    if global_max == 0:
        return QuantizedTensor(
            variant=Variant.NVFP4,
            shape=(rows, cols),
            block_size=16,
            macro_size=128,
            codes=np.zeros((rows, cols // 2), dtype=np.uint8),
            block_scales=None,
            e4m3_scales=np.zeros((rows, cols // 16), dtype=np.uint8),
            mbs_mantissas=None,
            tensor_scale=1.0,
        )
    s_t = global_max / (448.0 * 6.0)
    blocks = arr.astype(np.float64).reshape(rows, cols // 16, 16)
    alpha = np.max(np.abs(blocks), axis=2)
    ratios = alpha / (6.0 * s_t)
    scale_bytes = encode_e4m3_array(ratios)
    d = E4M3_TABLE[scale_bytes]
    denom = s_t * d
    # Blocks whose scale rounded to zero hold values below the
    # representable range; their codes flush to zero.
    safe = np.where(denom > 0, denom, 1.0)
    scaled = np.where(denom[:, :, None] > 0, blocks / safe[:, :, None], 0.0)
    codes = encode_e2m1_array(scaled.reshape(rows, cols), saturate=True)
    return QuantizedTensor(
        variant=Variant.NVFP4,
        shape=(rows, cols),
        block_size=16,
        macro_size=128,
        codes=_pack_codes(codes),
        block_scales=None,
        e4m3_scales=scale_bytes,
        mbs_mantissas=None,
        tensor_scale=s_t,
    )


def quantize_tensor(t: np.ndarray, cfg: SchemeConfig) -> QuantizedTensor:
    """Quantize a 2-D float32 tensor under the configured scheme.

    Rows are partitioned into macro blocks (MBS variants; a trailing
    partial macro block keeps whatever full 16-blocks remain) and then
    into 1 x block_size sub-blocks, each sharing one stored scale.

    Raises:
        ValueError: non-finite elements, or row length not divisible by
            the block size.
    """
    arr = _validate_tensor(t, 32 if cfg.variant is Variant.OCP32 else 16)
    if cfg.variant is Variant.NVFP4:
        return quantize_nvfp4(arr)
    if cfg.variant in MBS_VARIANTS:
        return _quantize_mbs(arr, cfg)
    return _quantize_power_of_two(arr, cfg)


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    """Reconstruct the float32 tensor: decode * D * sigma (* tensor scale).

    sigma is the inverse mantissa factor 1/(1 + m8/256) of the element's
    macro block; non-MBS variants have sigma = 1.

    Raises:
        ValueError: corrupt scale codes.
    """
    rows, cols = q.shape
    codes = q.unpack_codes()
    d = np.repeat(q.block_dequant_values(), q.block_size, axis=1)
    factor = None
    if q.mbs_mantissas is not None:
        factor = np.empty((rows, cols))
        factors = q.macro_factors()
        for i, (start, stop) in enumerate(macro_segments(cols, q.macro_size)):
            factor[:, start:stop] = factors[:, i : i + 1]
    return _dequantize_values(codes, d, factor, q.tensor_scale)
