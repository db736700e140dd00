"""Scalar number formats used by the quantization pipeline.

Four codecs live here:

* E2M1 -- the 4-bit element format (1 sign bit, 3 magnitude-index bits)
  over the grid {0, 0.5, 1, 1.5, 2, 3, 4, 6}.
* E8M0 -- the 8-bit power-of-two block scale (biased exponent, no mantissa).
* E4M3 -- the 8-bit float used for per-block scales in the NVFP4 reference
  scheme (1/4/3 layout, max finite 448, no infinities).
* Mantissa8 -- the 8-bit mantissa fraction behind macro-block scaling,
  extracted from the top mantissa bits of a float32.

Scalar functions are the readable reference; the ``*_array`` variants are
bit-identical vectorized mirrors used by the tensor pipeline.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "E2M1_GRID",
    "E2M1_MIDPOINTS",
    "E2M1_MAX",
    "E4M3_MAX",
    "Fp4Code",
    "E8M0Scale",
    "E4M3Value",
    "Mantissa8",
    "encode_e2m1",
    "decode_e2m1",
    "encode_e2m1_array",
    "decode_e2m1_array",
    "e8m0_floor",
    "encode_e4m3",
    "encode_e4m3_array",
    "decode_e4m3",
    "extract_mantissa8",
]

# Representable E2M1 magnitudes, indexed by the 3-bit magnitude field.
E2M1_GRID = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0])

# Decision boundaries between adjacent grid magnitudes. All are exactly
# representable in binary floating point, so tie detection is exact.
E2M1_MIDPOINTS = np.array([0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5.0])

E2M1_MAX = 6.0
E2M1_BIAS_NOTE = "bit 3 = sign, bits 2..0 = magnitude index"

E8M0_BIAS = 127
E8M0_INVALID = 255  # reserved code, never a valid scale

E4M3_MAX = 448.0


@dataclass(frozen=True)
class Fp4Code:
    """A single 4-bit E2M1 code (bit 3 = sign, bits 2..0 = magnitude index)."""

    code: int

    def __post_init__(self) -> None:
        if not 0 <= self.code <= 15:
            raise ValueError(f"4-bit code out of range: {self.code}")

    @property
    def sign(self) -> int:
        return self.code >> 3

    @property
    def magnitude_index(self) -> int:
        return self.code & 0x7

    @property
    def value(self) -> float:
        mag = float(E2M1_GRID[self.magnitude_index])
        return -mag if self.sign else mag


@dataclass(frozen=True)
class E8M0Scale:
    """Power-of-two scale 2**(biased_exponent - 127); code 255 is invalid.

    ``clamped`` records that the requested exponent fell outside
    [-127, 127] and was pinned to the nearest representable end.
    """

    biased_exponent: int
    clamped: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.biased_exponent <= 254:
            raise ValueError(
                f"biased exponent out of range or reserved: {self.biased_exponent}"
            )

    @property
    def exponent(self) -> int:
        return self.biased_exponent - E8M0_BIAS

    @property
    def value(self) -> float:
        return math.ldexp(1.0, self.exponent)


@dataclass(frozen=True)
class E4M3Value:
    """An 8-bit E4M3 code (1 sign, 4 exponent, 3 mantissa; max finite 448)."""

    byte: int

    def __post_init__(self) -> None:
        if not 0 <= self.byte <= 255:
            raise ValueError(f"byte out of range: {self.byte}")

    @property
    def value(self) -> float:
        return decode_e4m3(self)


@dataclass(frozen=True)
class Mantissa8:
    """8-bit mantissa fraction; the represented factor is 1 + m8/256."""

    m8: int

    def __post_init__(self) -> None:
        if not 0 <= self.m8 <= 255:
            raise ValueError(f"mantissa byte out of range: {self.m8}")

    @property
    def factor(self) -> float:
        return 1.0 + self.m8 / 256.0


def _nearest_magnitude_index(mag: np.ndarray) -> np.ndarray:
    """Nearest E2M1 grid index for non-negative magnitudes.

    Ties (exact midpoints) round to the even magnitude index, so the
    mapping commutes with doubling wherever both values stay on-grid.
    """
    idx = np.searchsorted(E2M1_MIDPOINTS, mag, side="left")
    # side="left" resolves ties downward; bump ties sitting on an odd
    # index up to the even neighbor.
    at_mid = (idx < 7) & (mag == E2M1_MIDPOINTS[np.minimum(idx, 6)])
    return np.where(at_mid & (idx % 2 == 1), idx + 1, idx)


def encode_e2m1(value: float, saturate: bool = False) -> Fp4Code:
    """Encode a real value to the nearest E2M1 code.

    Args:
        value: finite input; -0.0 normalizes to the +0 code.
        saturate: clamp magnitudes above 6.0 to 6.0 instead of raising.

    Returns:
        The nearest ``Fp4Code``, ties on the magnitude index to even.

    Raises:
        ValueError: non-finite input, or magnitude above 6.0 without
            ``saturate``.
    """
    if not math.isfinite(value):
        raise ValueError(f"cannot encode non-finite value: {value}")
    mag = abs(value)
    if mag > E2M1_MAX:
        if not saturate:
            raise ValueError(f"magnitude {mag} exceeds 6.0 and saturate=False")
        mag = E2M1_MAX
    idx = int(_nearest_magnitude_index(np.asarray(mag, dtype=np.float64)))
    sign = 1 if (value < 0 and idx > 0) else 0
    return Fp4Code((sign << 3) | idx)


def decode_e2m1(code: Fp4Code) -> float:
    """Decode an E2M1 code to its grid value (sign applied)."""
    return code.value


def encode_e2m1_array(values: np.ndarray, saturate: bool = False) -> np.ndarray:
    """Vectorized ``encode_e2m1``: float array -> uint8 codes.

    Matches the scalar encoder bit-for-bit, including tie handling and
    the normalization of negative flushes to the +0 code.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot encode non-finite values")
    mag = np.abs(v)
    if not saturate and np.any(mag > E2M1_MAX):
        raise ValueError("magnitude exceeds 6.0 and saturate=False")
    mag = np.minimum(mag, E2M1_MAX)
    idx = _nearest_magnitude_index(mag)
    sign = ((v < 0) & (idx > 0)).astype(np.uint8)
    return ((sign << 3) | idx.astype(np.uint8)).astype(np.uint8)


def decode_e2m1_array(codes: np.ndarray) -> np.ndarray:
    """Vectorized decode: uint8 codes -> float64 grid values."""
    c = np.asarray(codes)
    mag = E2M1_GRID[c & 0x7]
    return np.where(c & 0x8, -mag, mag)


def e8m0_floor(x: float) -> E8M0Scale:
    """Largest representable power of two not exceeding ``x``.

    Exponents outside [-127, 127] clamp to the range end and set the
    ``clamped`` flag rather than raising.

    Raises:
        ValueError: ``x`` is not a positive finite number.
    """
    if not (math.isfinite(x) and x > 0):
        raise ValueError(f"e8m0_floor requires a positive finite input, got {x}")
    # frexp gives x = m * 2**e with m in [0.5, 1), so floor(log2 x) = e - 1
    # exactly, including at exact powers of two.
    _, e = math.frexp(x)
    exponent = e - 1
    clamped = exponent < -127 or exponent > 127
    exponent = min(max(exponent, -127), 127)
    return E8M0Scale(exponent + E8M0_BIAS, clamped=clamped)


# ---------------------------------------------------------------------------
# E4M3 tables
# ---------------------------------------------------------------------------


def _build_e4m3_table() -> np.ndarray:
    """Decode table for all 256 E4M3 codes (NaN codes become nan)."""
    table = np.empty(256)
    for code in range(256):
        sign = -1.0 if code & 0x80 else 1.0
        exp = (code >> 3) & 0xF
        man = code & 0x7
        if exp == 0:
            val = (man / 8.0) * 2.0**-6  # subnormal
        elif exp == 15 and man == 7:
            val = math.nan  # the only NaN encoding per sign
        else:
            val = (1.0 + man / 8.0) * 2.0 ** (exp - 7)
        table[code] = sign * val
    return table


E4M3_TABLE = _build_e4m3_table()

# Non-negative finite magnitudes in code order (codes 0..126); strictly
# increasing, which makes code-index ties equivalent to mantissa-LSB ties.
_E4M3_POS = E4M3_TABLE[:127]
_E4M3_MIDS = (_E4M3_POS[:-1] + _E4M3_POS[1:]) / 2.0


def encode_e4m3(value: float) -> E4M3Value:
    """Encode to the nearest finite E4M3 value (round-to-nearest-even).

    Magnitudes above 448 clamp to 448. -0.0 normalizes to the +0 code.

    Raises:
        ValueError: non-finite input.
    """
    if not math.isfinite(value):
        raise ValueError(f"cannot encode non-finite value: {value}")
    mag = min(abs(value), E4M3_MAX)
    idx = int(np.searchsorted(_E4M3_MIDS, mag, side="left"))
    if idx < 126 and mag == _E4M3_MIDS[idx] and idx % 2 == 1:
        idx += 1  # ties to the even magnitude code
    sign = 0x80 if (value < 0 and idx > 0) else 0
    return E4M3Value(sign | idx)


def encode_e4m3_array(values: np.ndarray) -> np.ndarray:
    """Vectorized ``encode_e4m3``: float array -> uint8 codes.

    Matches the scalar encoder bit-for-bit (clamp at 448, ties to the
    even magnitude code, negative zero normalized to +0).
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot encode non-finite values")
    mag = np.minimum(np.abs(v), E4M3_MAX)
    idx = np.searchsorted(_E4M3_MIDS, mag, side="left")
    at_mid = (idx < 126) & (mag == _E4M3_MIDS[np.minimum(idx, 125)])
    idx = np.where(at_mid & (idx % 2 == 1), idx + 1, idx)
    sign = np.where((v < 0) & (idx > 0), 0x80, 0)
    return (sign | idx).astype(np.uint8)


def decode_e4m3(code: E4M3Value) -> float:
    """Decode an E4M3 code; the NaN encodings (0x7F/0xFF) raise."""
    val = float(E4M3_TABLE[code.byte])
    if math.isnan(val):
        raise ValueError(f"code 0x{code.byte:02X} is the E4M3 NaN encoding")
    return val


def extract_mantissa8(sf: float) -> Mantissa8:
    """Top 8 mantissa bits of ``sf`` as a float32, i.e. the truncation of
    (sf / 2**floor(log2 sf) - 1) to 8 fractional bits.

    The result is invariant to scaling ``sf`` by powers of two as long as
    the float32 value stays normal.

    Raises:
        ValueError: ``sf`` is not a positive finite number.
    """
    if not (math.isfinite(sf) and sf > 0):
        raise ValueError(f"extract_mantissa8 requires a positive finite input, got {sf}")
    (bits,) = struct.unpack("<I", struct.pack("<f", sf))
    return Mantissa8((bits & 0x007F8000) >> 15)
