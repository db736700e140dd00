"""4-bit microscaling quantization with overflow-aware and macro-block
scaling, bit-exact functional GEMM, fidelity metrics, and container I/O."""

from .formats import (
    E2M1_GRID,
    E2M1_MIDPOINTS,
    E2M1_MAX,
    E4M3_MAX,
    E4M3Value,
    E8M0Scale,
    Fp4Code,
    Mantissa8,
    decode_e2m1,
    decode_e2m1_array,
    decode_e4m3,
    e8m0_floor,
    encode_e2m1,
    encode_e2m1_array,
    encode_e4m3,
    encode_e4m3_array,
    extract_mantissa8,
)
from .gemm import (
    OverheadReport,
    TileConfig,
    matmul_quantized,
    matmul_reference,
    max_ulp_divergence,
    roofline_overhead,
)
from .metrics import (
    GeneratorSpec,
    QsnrReport,
    ScaleSpanStats,
    SweepResult,
    SweepRow,
    ablation_sweep,
    activation_like,
    flush_to_zero_rate,
    generate_tensor,
    mean_qsnr,
    qsnr_matmul,
    qsnr_tensor,
    scale_exponent_span,
    weight_like,
)
from .quantize import (
    CandidateSet,
    ErrorLut,
    QuantizedTensor,
    SchemeConfig,
    Variant,
    block_scale_16,
    block_scale_ocp,
    build_error_lut,
    default_candidates,
    dequantize_tensor,
    macro_segments,
    mbs_dynamic_exact,
    mbs_dynamic_lut,
    mbs_static_mantissa,
    quantize_block,
    quantize_nvfp4,
    quantize_tensor,
)
from .tensorio import load_quant, load_tensor, save_quant, save_tensor

__version__ = "0.1.0"
