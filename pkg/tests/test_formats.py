"""Codec tests: E2M1, E8M0, E4M3, and the 8-bit mantissa extraction.

Every encoder is checked against a brute-force nearest-value oracle that
scans the full value table, written independently of the library's
searchsorted path.
"""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mxq.formats import (
    E2M1_GRID,
    E2M1_MAX,
    E4M3_TABLE,
    E4M3Value,
    E8M0Scale,
    Fp4Code,
    Mantissa8,
    decode_e2m1,
    decode_e4m3,
    e8m0_floor,
    encode_e2m1,
    encode_e2m1_array,
    encode_e4m3,
    encode_e4m3_array,
    extract_mantissa8,
    decode_e2m1_array,
)


def brute_force_e2m1(value: float) -> int:
    """Independent oracle: scan all 8 magnitudes, prefer the even index on
    exact ties, drop the sign of a zero magnitude."""
    mag = min(abs(value), E2M1_MAX)
    best = None
    for idx in range(8):
        dist = abs(mag - E2M1_GRID[idx])
        if best is None or dist < best[0] - 1e-30:
            best = (dist, idx)
        elif dist == best[0] and idx % 2 == 0 and best[1] % 2 == 1:
            best = (dist, idx)
    idx = best[1]
    sign = 1 if (value < 0 and idx > 0) else 0
    return (sign << 3) | idx


# ---------------------------------------------------------------------------
# E2M1
# ---------------------------------------------------------------------------


def test_e2m1_all_16_codes_round_trip():
    for c in range(16):
        code = Fp4Code(c)
        back = encode_e2m1(decode_e2m1(code))
        # code 8 is negative zero; it re-encodes to +0 with equal value
        assert decode_e2m1(back) == decode_e2m1(code)
        if c != 8:
            assert back.code == c


def test_e2m1_code_fields():
    code = Fp4Code(0b1101)
    assert code.sign == 1
    assert code.magnitude_index == 5
    assert code.value == -3.0
    with pytest.raises(ValueError):
        Fp4Code(16)


def test_e2m1_tie_breaking_frozen():
    # midpoints round to the even magnitude index
    assert encode_e2m1(0.25).value == 0.0
    assert encode_e2m1(0.75).value == 1.0
    assert encode_e2m1(1.25).value == 1.0
    assert encode_e2m1(1.75).value == 2.0
    assert encode_e2m1(2.5).value == 2.0
    assert encode_e2m1(3.5).value == 4.0
    assert encode_e2m1(5.0).value == 4.0
    # and on the negative side, with sign preserved for nonzero magnitudes
    assert encode_e2m1(-2.5).value == -2.0
    assert encode_e2m1(-0.25).code == 0  # negative flush drops the sign


def test_e2m1_saturation_and_errors():
    assert encode_e2m1(6.6, saturate=True).value == 6.0
    assert encode_e2m1(-100.0, saturate=True).value == -6.0
    with pytest.raises(ValueError):
        encode_e2m1(6.6)
    with pytest.raises(ValueError):
        encode_e2m1(math.nan)
    with pytest.raises(ValueError):
        encode_e2m1(math.inf, saturate=True)


def test_e2m1_negative_zero_normalizes():
    assert encode_e2m1(-0.0).code == 0
    assert encode_e2m1(-0.1).code == 0  # flushes, sign dropped


def test_e2m1_matches_brute_force_oracle():
    rng = np.random.Generator(np.random.PCG64(1234))
    values = np.concatenate(
        [
            rng.uniform(-7.0, 7.0, 4000),
            rng.standard_normal(2000) * 3,
            np.array([0.0, -0.0, 0.25, -0.25, 0.75, 2.5, 3.5, 5.0, 6.0, -6.0]),
        ]
    )
    for v in values:
        assert encode_e2m1(float(v), saturate=True).code == brute_force_e2m1(float(v))


def test_e2m1_array_matches_scalar():
    rng = np.random.Generator(np.random.PCG64(77))
    values = np.concatenate(
        [rng.uniform(-8, 8, 5000), E2M1_GRID, -E2M1_GRID, [0.25, 0.75, 1.25, 2.5, 3.5]]
    )
    array_codes = encode_e2m1_array(values, saturate=True)
    for v, c in zip(values, array_codes):
        assert encode_e2m1(float(v), saturate=True).code == int(c)
    # array decode matches scalar decode
    decoded = decode_e2m1_array(array_codes)
    for c, d in zip(array_codes, decoded):
        assert decode_e2m1(Fp4Code(int(c))) == d


def test_e2m1_array_rejects_like_scalar():
    with pytest.raises(ValueError):
        encode_e2m1_array(np.array([1.0, 6.5]))
    with pytest.raises(ValueError):
        encode_e2m1_array(np.array([np.inf]), saturate=True)


@given(st.floats(min_value=-6.0, max_value=6.0, allow_nan=False))
@settings(max_examples=300, deadline=None)
def test_e2m1_rounds_to_nearest(v):
    q = encode_e2m1(v).value
    dists = np.abs(np.concatenate([E2M1_GRID, -E2M1_GRID]) - v)
    assert abs(q - v) == pytest.approx(float(dists.min()), abs=0.0)


# ---------------------------------------------------------------------------
# E8M0
# ---------------------------------------------------------------------------


def test_e8m0_all_255_codes_round_trip():
    for biased in range(255):
        scale = E8M0Scale(biased)
        back = e8m0_floor(scale.value)
        assert back.biased_exponent == biased
        assert not back.clamped
    with pytest.raises(ValueError):
        E8M0Scale(255)
    with pytest.raises(ValueError):
        E8M0Scale(-1)


def test_e8m0_floor_frozen_values():
    assert e8m0_floor(1.7647).value == 1.0
    assert e8m0_floor(6.0).value == 4.0
    assert e8m0_floor(0.9).value == 0.5
    assert e8m0_floor(2.0**-130).biased_exponent == 0  # clamped at 2^-127
    assert e8m0_floor(2.0**-130).clamped
    assert e8m0_floor(2.0**200).biased_exponent == 254
    assert e8m0_floor(2.0**200).clamped


def test_e8m0_floor_is_a_floor():
    rng = np.random.Generator(np.random.PCG64(5))
    for x in rng.uniform(1e-30, 1e30, 2000):
        s = e8m0_floor(float(x))
        assert s.value <= x < 2 * s.value


def test_e8m0_floor_rejects_non_positive():
    for bad in (0.0, -1.0, math.nan, math.inf):
        with pytest.raises(ValueError):
            e8m0_floor(bad)


# ---------------------------------------------------------------------------
# E4M3
# ---------------------------------------------------------------------------


def test_e4m3_decode_table_spot_values():
    assert E4M3_TABLE[0] == 0.0
    assert E4M3_TABLE[0x7E] == 448.0
    assert math.isnan(E4M3_TABLE[0x7F])
    assert math.isnan(E4M3_TABLE[0xFF])
    # smallest subnormal = 2^-9
    assert E4M3_TABLE[1] == 2.0**-9
    assert E4M3_TABLE[0x81] == -(2.0**-9)


def test_e4m3_all_finite_codes_round_trip():
    for byte in range(256):
        if byte in (0x7F, 0xFF):
            with pytest.raises(ValueError):
                decode_e4m3(E4M3Value(byte))
            continue
        val = decode_e4m3(E4M3Value(byte))
        back = encode_e4m3(val)
        # 0x80 is negative zero; it re-encodes to +0 with equal value
        assert decode_e4m3(back) == val
        if byte != 0x80:
            assert back.byte == byte


def brute_force_e4m3(value: float) -> int:
    """Independent oracle over the finite decode table."""
    mag = min(abs(value), 448.0)
    best = None
    for b in range(127):
        dist = abs(E4M3_TABLE[b] - mag)
        if best is None or dist < best[0]:
            best = (dist, b)
        elif dist == best[0] and b % 2 == 0 and best[1] % 2 == 1:
            best = (dist, b)
    b = best[1]
    return (0x80 | b) if (value < 0 and b > 0) else b


def test_e4m3_matches_brute_force_oracle():
    rng = np.random.Generator(np.random.PCG64(99))
    values = np.concatenate(
        [
            rng.uniform(-500, 500, 2000),
            rng.uniform(-0.02, 0.02, 1000),
            E4M3_TABLE[:127],           # exact table values
            (E4M3_TABLE[:126] + E4M3_TABLE[1:127]) / 2,  # exact midpoints
        ]
    )
    for v in values:
        assert encode_e4m3(float(v)).byte == brute_force_e4m3(float(v))


def test_e4m3_array_matches_scalar():
    rng = np.random.Generator(np.random.PCG64(64))
    values = np.concatenate(
        [rng.uniform(-460, 460, 3000), (E4M3_TABLE[:126] + E4M3_TABLE[1:127]) / 2]
    )
    codes = encode_e4m3_array(values)
    for v, c in zip(values, codes):
        assert encode_e4m3(float(v)).byte == int(c)


def test_e4m3_clamps_and_rejects():
    assert decode_e4m3(encode_e4m3(500.0)) == 448.0
    assert decode_e4m3(encode_e4m3(-1e9)) == -448.0
    with pytest.raises(ValueError):
        encode_e4m3(math.inf)


# ---------------------------------------------------------------------------
# Mantissa8
# ---------------------------------------------------------------------------


def test_mantissa8_frozen_values():
    assert extract_mantissa8(1.0).m8 == 0
    assert extract_mantissa8(1.5).m8 == 128
    assert extract_mantissa8(6.0 / 4.4).m8 == 93
    assert Mantissa8(93).factor == 1 + 93 / 256


def test_mantissa8_matches_bit_oracle():
    rng = np.random.Generator(np.random.PCG64(21))
    for x in rng.uniform(1e-6, 1e6, 5000):
        (bits,) = struct.unpack("<I", struct.pack("<f", float(x)))
        expected = (bits >> 15) & 0xFF
        assert extract_mantissa8(float(x)).m8 == expected


def test_mantissa8_truncation_accuracy():
    # factor approximates the true significand from below, within 1/256
    rng = np.random.Generator(np.random.PCG64(8))
    for x in rng.uniform(0.001, 1000.0, 5000):
        m = extract_mantissa8(float(x))
        sig = np.float64(np.float32(x)) / 2.0 ** math.floor(math.log2(np.float32(x)))
        assert m.factor <= sig < m.factor + 1 / 256


@given(st.floats(min_value=1e-30, max_value=1e30, allow_nan=False),
       st.integers(min_value=-20, max_value=20))
@settings(max_examples=300, deadline=None)
def test_mantissa8_power_of_two_invariance(x, k):
    scaled = x * 2.0**k
    if not (1e-37 < scaled < 1e37):  # keep the float32 value normal
        return
    assert extract_mantissa8(x).m8 == extract_mantissa8(scaled).m8


def test_mantissa8_rejects_non_positive():
    for bad in (0.0, -2.0, math.nan, math.inf):
        with pytest.raises(ValueError):
            extract_mantissa8(bad)
