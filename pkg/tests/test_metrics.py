"""Fidelity metrics, synthetic generators, and the ablation sweep."""

import dataclasses
import math

import numpy as np
import pytest

from mxq import (
    GeneratorSpec,
    SchemeConfig,
    Variant,
    ablation_sweep,
    activation_like,
    dequantize_tensor,
    flush_to_zero_rate,
    generate_tensor,
    matmul_reference,
    matmul_quantized,
    mean_qsnr,
    qsnr_matmul,
    qsnr_tensor,
    quantize_tensor,
    scale_exponent_span,
    weight_like,
)


def exactly_representable(rng, rows, cols, block=16):
    grid = np.array([0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0])
    vals = rng.choice(np.concatenate([grid, -grid]), size=(rows, cols))
    scales = np.exp2(rng.integers(-8, 8, (rows, cols // block))).repeat(block, axis=1)
    return (vals * scales).astype(np.float32)


# ---------------------------------------------------------------------------
# qsnr_tensor
# ---------------------------------------------------------------------------


def test_qsnr_frozen_cases():
    rng = np.random.Generator(np.random.PCG64(201))
    ref = rng.standard_normal((8, 32)).astype(np.float32)
    assert qsnr_tensor(ref, ref).qsnr_db == math.inf
    assert qsnr_tensor(ref, ref).mse == 0.0
    assert qsnr_tensor(ref, np.zeros_like(ref)).qsnr_db == pytest.approx(0.0, abs=1e-12)
    half = qsnr_tensor(ref, ref / 2)
    assert half.qsnr_db == pytest.approx(10 * math.log10(4.0), abs=1e-9)
    assert half.qsnr_db == pytest.approx(6.0206, abs=1e-4)


def test_qsnr_report_log_identity():
    rng = np.random.Generator(np.random.PCG64(202))
    ref = rng.standard_normal((4, 16)).astype(np.float32)
    rep = qsnr_tensor(ref, ref * np.float32(0.9))
    assert rep.qsnr_db == 10 * math.log10(rep.signal_power / rep.mse)
    assert rep.n_tensors == 1


def test_qsnr_scale_covariance():
    rng = np.random.Generator(np.random.PCG64(203))
    ref = rng.standard_normal((8, 64)).astype(np.float32)
    q = (ref + rng.standard_normal((8, 64)) * 0.01).astype(np.float32)
    base = qsnr_tensor(ref, q).qsnr_db
    for c in (np.float32(4.0), np.float32(0.125), np.float32(-2.0)):
        assert qsnr_tensor(ref * c, q * c).qsnr_db == base  # powers of two: exact


def test_qsnr_errors():
    ref = np.ones((2, 4), dtype=np.float32)
    with pytest.raises(ValueError):
        qsnr_tensor(ref, np.ones((2, 5), dtype=np.float32))
    with pytest.raises(ValueError):
        qsnr_tensor(np.zeros((2, 4), dtype=np.float32), ref)


# ---------------------------------------------------------------------------
# qsnr_matmul
# ---------------------------------------------------------------------------


def test_qsnr_matmul_exact_operands_infinite():
    rng = np.random.Generator(np.random.PCG64(205))
    a = exactly_representable(rng, 8, 64)
    b = exactly_representable(rng, 6, 64)
    aq = quantize_tensor(a, SchemeConfig(Variant.MX16))
    bq = quantize_tensor(b, SchemeConfig(Variant.MX16))
    assert qsnr_matmul(a, b, aq, bq).qsnr_db == math.inf


def test_qsnr_matmul_halved_operand_is_six_db():
    # halving one operand's stored exponents halves its dequantization
    # exactly, so the product is C/2 and the QSNR is 10*log10(4)
    rng = np.random.Generator(np.random.PCG64(206))
    a = exactly_representable(rng, 8, 64)
    b = exactly_representable(rng, 6, 64)
    aq = quantize_tensor(a, SchemeConfig(Variant.MX16))
    bq = quantize_tensor(b, SchemeConfig(Variant.MX16))
    aq_half = dataclasses.replace(aq, block_scales=aq.block_scales - 1)
    assert np.array_equal(dequantize_tensor(aq_half), a / 2)
    rep = qsnr_matmul(a, b, aq_half, bq)
    assert rep.qsnr_db == pytest.approx(10 * math.log10(4.0), abs=1e-9)


def test_qsnr_matmul_mbs_beats_oas_in_the_mean():
    # gaussian 256x512 operand pairs: the dynamic mantissa search must win
    # on product fidelity in the mean over 30 seeds (direction only)
    deltas = []
    for i in range(30):
        a = generate_tensor(GeneratorSpec("gaussian", (256, 512), seed=5000 + i))
        b = generate_tensor(GeneratorSpec("gaussian", (256, 512), seed=6000 + i))
        c_ref = matmul_reference(a, b)
        db = {}
        for v in (Variant.MBS_D, Variant.MX16_OAS):
            aq = quantize_tensor(a, SchemeConfig(v))
            bq = quantize_tensor(b, SchemeConfig(v))
            db[v] = qsnr_tensor(c_ref, matmul_quantized(aq, bq)).qsnr_db
        deltas.append(db[Variant.MBS_D] - db[Variant.MX16_OAS])
    assert float(np.mean(deltas)) > 0.0


# ---------------------------------------------------------------------------
# flush_to_zero_rate
# ---------------------------------------------------------------------------


def test_flush_rate_frozen_block():
    ref = np.zeros((1, 16), dtype=np.float32)
    ref[0, 0] = 6.0
    ref[0, 1] = 0.1  # scaled by SF=1: 0.1 < 0.25, flushes
    q = quantize_tensor(ref, SchemeConfig(Variant.MX16))
    assert flush_to_zero_rate(ref, q) == 0.5


def test_flush_rate_exact_tensor_is_zero():
    rng = np.random.Generator(np.random.PCG64(207))
    ref = exactly_representable(rng, 4, 64)
    ref[ref == 0] = 1.0
    q = quantize_tensor(ref, SchemeConfig(Variant.MX16))
    assert flush_to_zero_rate(ref, q) == 0.0
    assert flush_to_zero_rate(np.zeros((2, 16), np.float32),
                              quantize_tensor(np.zeros((2, 16), np.float32),
                                              SchemeConfig(Variant.MX16))) == 0.0


def test_flush_rate_width_dominance_direct_construction():
    # one large element shares its scale with 31 small ones at width 32
    # but with only 15 of them at width 16: the coarser grouping flushes
    # strictly more
    ref = np.full((1, 32), 0.1, dtype=np.float32)
    ref[0, 0] = 6.0
    q16 = quantize_tensor(ref, SchemeConfig(Variant.MX16))
    q32 = quantize_tensor(ref, SchemeConfig(Variant.OCP32))
    assert flush_to_zero_rate(ref, q16) == 15 / 32
    assert flush_to_zero_rate(ref, q32) == 31 / 32


def test_flush_rate_width_dominance_sampled():
    for i in range(10):
        spec = GeneratorSpec("gaussian_with_outliers", (32, 256), seed=300 + i)
        t = generate_tensor(spec)
        r16 = flush_to_zero_rate(t, quantize_tensor(t, SchemeConfig(Variant.MX16)))
        r32 = flush_to_zero_rate(t, quantize_tensor(t, SchemeConfig(Variant.OCP32)))
        assert r16 <= r32


def test_flush_rate_shape_mismatch():
    t = np.ones((2, 16), dtype=np.float32)
    q = quantize_tensor(t, SchemeConfig(Variant.MX16))
    with pytest.raises(ValueError):
        flush_to_zero_rate(np.ones((2, 32), dtype=np.float32), q)


# ---------------------------------------------------------------------------
# scale_exponent_span
# ---------------------------------------------------------------------------


def test_scale_span_constant_tensor():
    t = np.full((2, 32), 3.0, dtype=np.float32)
    stats = scale_exponent_span(quantize_tensor(t, SchemeConfig(Variant.MX16)))
    assert stats.max_exponent == stats.min_exponent
    assert stats.within_2pow15_fraction == 1.0
    assert stats.within_e4m3_span_fraction == 1.0


def test_scale_span_two_decades():
    t = np.zeros((1, 32), dtype=np.float32)
    t[0, 0] = 6.0           # block scale 2^0
    t[0, 16] = 6.0 * 2**20  # block scale 2^20
    stats = scale_exponent_span(quantize_tensor(t, SchemeConfig(Variant.MX16)))
    assert stats.max_exponent == 20
    assert stats.min_exponent == 0
    assert stats.within_2pow15_fraction == 0.5
    assert stats.within_e4m3_span_fraction == 0.5


def test_scale_span_gaussian_reported_not_asserted():
    t = generate_tensor(GeneratorSpec("gaussian", (64, 256), seed=208))
    stats = scale_exponent_span(quantize_tensor(t, SchemeConfig(Variant.MX16)))
    print(
        f"gaussian span fractions: 2^15 {stats.within_2pow15_fraction:.4f}, "
        f"4-bit-exponent reach {stats.within_e4m3_span_fraction:.4f}"
    )
    assert 0.0 < stats.within_2pow15_fraction <= 1.0
    assert stats.within_e4m3_span_fraction >= stats.within_2pow15_fraction - 1e-12


def test_scale_span_rejects_nvfp4():
    t = np.ones((2, 32), dtype=np.float32)
    with pytest.raises(ValueError):
        scale_exponent_span(quantize_tensor(t, SchemeConfig(Variant.NVFP4)))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def test_generate_tensor_reproducible():
    for dist in ("gaussian", "lognormal", "student_t", "gaussian_with_outliers"):
        spec = GeneratorSpec(dist, (16, 64), seed=209)
        assert np.array_equal(generate_tensor(spec), generate_tensor(spec))
    # different seeds differ
    a = generate_tensor(GeneratorSpec("gaussian", (16, 64), seed=1))
    b = generate_tensor(GeneratorSpec("gaussian", (16, 64), seed=2))
    assert not np.array_equal(a, b)


def test_generate_outlier_positions_near_binomial_mean():
    spec = GeneratorSpec("gaussian_with_outliers", (128, 128), seed=210,
                         rate=0.01, magnitude=100.0)
    t = generate_tensor(spec)
    base = generate_tensor(GeneratorSpec("gaussian", (128, 128), seed=210))
    count = int(np.count_nonzero(t != base))
    assert abs(count - 163.84) < 64  # ~5 sigma of Binomial(16384, 0.01)


def test_student_t_heavier_tails_than_gaussian():
    n = 1_000_000
    t3 = generate_tensor(GeneratorSpec("student_t", (1000, 1000), seed=211, dof=3.0))
    gauss = generate_tensor(GeneratorSpec("gaussian", (1000, 1000), seed=211))

    def excess_kurtosis(x):
        x64 = x.astype(np.float64).ravel()[:n]
        x64 = x64 - x64.mean()
        return float(np.mean(x64**4) / np.mean(x64**2) ** 2 - 3.0)

    assert excess_kurtosis(t3) > 0.0
    assert excess_kurtosis(t3) > excess_kurtosis(gauss)


def test_generator_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec("cauchy", (4, 4), seed=0)
    with pytest.raises(ValueError):
        GeneratorSpec("student_t", (4, 4), seed=0, dof=0.0)
    with pytest.raises(ValueError):
        GeneratorSpec("gaussian_with_outliers", (4, 4), seed=0, rate=1.5)
    with pytest.raises(ValueError):
        GeneratorSpec("gaussian", (0, 4), seed=0)


def test_role_presets():
    act = activation_like((8, 32), seed=3)
    assert act.distribution == "student_t" and act.dof == 4.0
    wt = weight_like((8, 32), seed=3)
    assert wt.distribution == "gaussian"
    assert np.array_equal(generate_tensor(wt),
                          generate_tensor(GeneratorSpec("gaussian", (8, 32), seed=3)))


# ---------------------------------------------------------------------------
# mean_qsnr
# ---------------------------------------------------------------------------


def test_mean_qsnr_single_tensor_reduces_to_qsnr():
    spec = GeneratorSpec("gaussian", (16, 64), seed=212)
    cfg = SchemeConfig(Variant.MX16)
    rep = mean_qsnr(spec, 1, cfg)
    t = generate_tensor(spec)
    direct = qsnr_tensor(t, dequantize_tensor(quantize_tensor(t, cfg)))
    assert rep.qsnr_db == direct.qsnr_db
    assert rep.mse == direct.mse
    assert rep.signal_power == direct.signal_power
    assert rep.n_tensors == 1
    with pytest.raises(ValueError):
        mean_qsnr(spec, 0, cfg)


def test_mean_qsnr_scheme_ordering_with_outliers():
    spec = GeneratorSpec("gaussian_with_outliers", (64, 256), seed=1234)
    db = {
        v: mean_qsnr(spec, 100, SchemeConfig(v)).qsnr_db
        for v in (Variant.OCP32, Variant.MX16, Variant.MX16_OAS, Variant.MBS_D)
    }
    assert db[Variant.OCP32] <= db[Variant.MX16]
    assert db[Variant.MX16] <= db[Variant.MX16_OAS]
    assert db[Variant.MX16_OAS] <= db[Variant.MBS_D]


def test_per_tensor_dominance_chain():
    # OAS >= plain and dynamic (augmented) >= static >= nothing, per tensor
    for i in range(12):
        t = generate_tensor(GeneratorSpec("student_t", (16, 256), seed=400 + i))

        def db(v):
            q = quantize_tensor(t, SchemeConfig(v))
            return qsnr_tensor(t, dequantize_tensor(q)).qsnr_db

        assert db(Variant.MX16_OAS) >= db(Variant.MX16)
        assert db(Variant.MBS_D) >= db(Variant.MBS_S)
        assert db(Variant.MBS_D) >= db(Variant.MX16_OAS)


# ---------------------------------------------------------------------------
# ablation_sweep
# ---------------------------------------------------------------------------


def test_sweep_row_count_and_fields():
    spec = GeneratorSpec("gaussian", (8, 512), seed=213)
    res = ablation_sweep(spec, (32, 64, 128, 256, 512),
                         (Variant.MX16, Variant.MBS_S), n=2)
    assert len(res.rows) == 2 * 2 * 5  # roles x schemes x macro sizes
    roles = {r.role for r in res.rows}
    assert roles == {"activation_like", "weight_like"}
    for row in res.rows:
        assert row.scheme in ("mx16", "mbs_s")
        assert row.macro_size in (32, 64, 128, 256, 512)
        assert math.isfinite(row.mean_qsnr_db)
        assert 0.0 <= row.mean_flush_rate <= 1.0


def test_sweep_macro_validation():
    spec = GeneratorSpec("gaussian", (8, 512), seed=214)
    with pytest.raises(ValueError):
        ablation_sweep(spec, (24,), (Variant.MX16,), n=1)
    with pytest.raises(ValueError):
        ablation_sweep(spec, (16,), (Variant.OCP32,), n=1)


def test_sweep_mbs_macro_monotonicity():
    # finer macro granularity can only help the dynamic search: mean QSNR
    # over 30 seeds is non-increasing in macro size, and macro 16
    # (per-block mantissas) tops every wider setting
    spec = GeneratorSpec("gaussian", (32, 512), seed=900)
    res = ablation_sweep(spec, (16, 32, 64, 128, 256, 512), (Variant.MBS_D,), n=30)
    for role in ("activation_like", "weight_like"):
        rows = sorted((r for r in res.rows if r.role == role),
                      key=lambda r: r.macro_size)
        dbs = [r.mean_qsnr_db for r in rows]
        assert all(dbs[i] >= dbs[i + 1] for i in range(len(dbs) - 1)), (role, dbs)
        assert dbs[0] == max(dbs)  # macro 16 at the top
