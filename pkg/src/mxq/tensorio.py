"""Binary persistence for tensors and quantized tensors.

Both containers share one envelope: a 4-byte magic, a little-endian
uint32 header length, a UTF-8 JSON header, then raw little-endian payload
sections in a fixed order. Headers carry everything needed to compute
section offsets without heuristics. Writes are atomic (temp file +
rename), so readers never observe partial files.

``MXT1`` holds a dense row-major float32 matrix. ``MXQ1`` holds packed
4-bit codes, one scale byte per block, optional per-macro mantissa bytes,
and an optional 8-byte float64 tensor scale.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .quantize import QuantizedTensor, Variant

__all__ = [
    "TENSOR_MAGIC",
    "QUANT_MAGIC",
    "save_tensor",
    "load_tensor",
    "save_quant",
    "load_quant",
]

TENSOR_MAGIC = b"MXT1"
QUANT_MAGIC = b"MXQ1"


def _atomic_write(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _envelope(magic: bytes, header: dict, payload: bytes) -> bytes:
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return magic + struct.pack("<I", len(header_bytes)) + header_bytes + payload


def _read_envelope(path: str, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != magic:
        raise ValueError(f"{path}: bad magic, expected {magic.decode()}")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if 8 + header_len > len(blob):
        raise ValueError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed header: {exc}") from exc
    return header, blob[8 + header_len :]


def save_tensor(t: np.ndarray, path: str) -> None:
    """Write a 2-D float32 tensor as an MXT1 container (atomically)."""
    arr = np.ascontiguousarray(t, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D tensor, got shape {arr.shape}")
    header = {
        "dtype": "f32",
        "shape": [int(arr.shape[0]), int(arr.shape[1])],
        "layout": "row-major",
    }
    _atomic_write(path, _envelope(TENSOR_MAGIC, header, arr.astype("<f4").tobytes()))


def load_tensor(path: str, allow_non_finite: bool = False) -> np.ndarray:
    """Read an MXT1 container back into a float32 matrix.

    Args:
        path: file to read.
        allow_non_finite: accept NaN/infinity payload entries instead of
            rejecting the file.

    Raises:
        ValueError: bad magic, malformed header, wrong payload length, or
            (by default) non-finite entries.
    """
    header, payload = _read_envelope(path, TENSOR_MAGIC)
    if header.get("dtype") != "f32" or header.get("layout") != "row-major":
        raise ValueError(f"{path}: unsupported dtype/layout in header: {header}")
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != 2
        or not all(isinstance(d, int) and d > 0 for d in shape)
    ):
        raise ValueError(f"{path}: bad shape in header: {shape}")
    rows, cols = shape
    expected = rows * cols * 4
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload length {len(payload)} != expected {expected}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    if not allow_non_finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: payload contains non-finite values")
    return arr


def save_quant(q: QuantizedTensor, path: str) -> None:
    """Write a quantized tensor as an MXQ1 container (atomically).

    Sections follow the header in fixed order: packed codes, scale bytes,
    mantissa bytes (MBS variants), tensor scale (8-byte float64, NVFP4).
    """
    rows, cols = q.shape
    header = {
        "variant": q.variant.value,
        "shape": [int(rows), int(cols)],
        "block_size": int(q.block_size),
        "macro_size": int(q.macro_size),
        "has_mbs": q.mbs_mantissas is not None,
        "has_tensor_scale": q.tensor_scale is not None,
    }
    scales = q.e4m3_scales if q.variant is Variant.NVFP4 else q.block_scales
    payload = q.codes.tobytes() + scales.tobytes()
    if q.mbs_mantissas is not None:
        payload += q.mbs_mantissas.tobytes()
    if q.tensor_scale is not None:
        payload += struct.pack("<d", q.tensor_scale)
    _atomic_write(path, _envelope(QUANT_MAGIC, header, payload))


def load_quant(path: str) -> QuantizedTensor:
    """Read an MXQ1 container back into a QuantizedTensor, bit-exactly.

    Raises:
        ValueError: bad magic, malformed header, inconsistent sections,
            or payload length mismatch.
    """
    header, payload = _read_envelope(path, QUANT_MAGIC)
    try:
        variant = Variant(header["variant"])
        rows, cols = (int(d) for d in header["shape"])
        block_size = int(header["block_size"])
        macro_size = int(header["macro_size"])
        has_mbs = bool(header["has_mbs"])
        has_tensor_scale = bool(header["has_tensor_scale"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"{path}: malformed header: {exc}") from exc

    expected_bs = 32 if variant is Variant.OCP32 else 16
    if block_size != expected_bs:
        raise ValueError(f"{path}: variant {variant.value} cannot have block_size {block_size}")
    if rows <= 0 or cols <= 0 or cols % block_size != 0:
        raise ValueError(f"{path}: invalid shape {rows}x{cols} for block_size {block_size}")
    if macro_size <= 0 or macro_size % expected_bs != 0:
        raise ValueError(f"{path}: invalid macro_size {macro_size}")
    if has_mbs != (variant in (Variant.MBS_S, Variant.MBS_D)):
        raise ValueError(f"{path}: mantissa section inconsistent with variant {variant.value}")
    if has_tensor_scale != (variant is Variant.NVFP4):
        raise ValueError(f"{path}: tensor-scale section inconsistent with variant {variant.value}")

    n_codes = rows * (cols // 2)
    n_scales = rows * (cols // block_size)
    n_macros = -(-cols // macro_size)
    n_mbs = rows * n_macros if has_mbs else 0
    n_ts = 8 if has_tensor_scale else 0
    if len(payload) != n_codes + n_scales + n_mbs + n_ts:
        raise ValueError(
            f"{path}: payload length {len(payload)} != expected {n_codes + n_scales + n_mbs + n_ts}"
        )

    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        part = payload[offset : offset + n]
        offset += n
        return part

    codes = np.frombuffer(take(n_codes), dtype=np.uint8).reshape(rows, cols // 2).copy()
    scales = (
        np.frombuffer(take(n_scales), dtype=np.uint8)
        .reshape(rows, cols // block_size)
        .copy()
    )
    mantissas = None
    if has_mbs:
        mantissas = np.frombuffer(take(n_mbs), dtype=np.uint8).reshape(rows, n_macros).copy()
    tensor_scale = None
    if has_tensor_scale:
        (tensor_scale,) = struct.unpack("<d", take(8))

    return QuantizedTensor(
        variant=variant,
        shape=(rows, cols),
        block_size=block_size,
        macro_size=macro_size,
        codes=codes,
        block_scales=None if variant is Variant.NVFP4 else scales,
        e4m3_scales=scales if variant is Variant.NVFP4 else None,
        mbs_mantissas=mantissas,
        tensor_scale=tensor_scale,
    )
