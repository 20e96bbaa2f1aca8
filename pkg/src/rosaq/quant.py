"""Per-group affine INT3/INT4 quantization, bit packing and AWQ channel scales.

A group is one slice of up to ``group_size`` consecutive input channels for a
single output column. It is stored as a real offset (the slice minimum), a
non-negative scale and one unsigned code per value::

    scale = (max - min) / (2**bits - 1)
    code  = clamp(floor((w - min) / scale + 0.5), 0, 2**bits - 1)
    w_hat = scale * code + min

A constant slice gets ``scale = 0`` and all-zero codes, so it reconstructs
exactly. Codes are packed LSB-first into a little-endian bit stream, padded
with zero bits to a byte boundary per group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .linalg import as_matrix

AWQ_ALPHA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 4
    group_size: int = 128

    def __post_init__(self):
        if self.bits not in (3, 4):
            raise ValueError(f"bits must be 3 or 4, got {self.bits}")
        if self.group_size <= 0 or self.group_size % 32:
            raise ValueError(f"group_size must be a positive multiple of 32, got {self.group_size}")


@dataclass(frozen=True)
class QuantizedGroup:
    bits: int
    scale: float
    offset: float
    count: int
    codes: bytes

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in 1..8, got {self.bits}")
        if not self.scale >= 0.0:
            raise ValueError(f"scale must be non-negative, got {self.scale}")
        if len(self.codes) != packed_size(self.count, self.bits):
            raise ValueError(
                f"group of {self.count} {self.bits}-bit codes needs "
                f"{packed_size(self.count, self.bits)} bytes, got {len(self.codes)}")


@dataclass(frozen=True)
class ScalingVector:
    per_channel_scale: np.ndarray
    alpha: float

    def __post_init__(self):
        s = self.per_channel_scale
        if s.ndim != 1 or not np.all(np.isfinite(s)) or not np.all(s > 0):
            raise ValueError("scales must be a finite, strictly positive vector")


def packed_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def _bits_of(cfg) -> int:
    return cfg.bits if isinstance(cfg, QuantConfig) else int(cfg)


def pack_codes(codes, bits: int) -> bytes:
    """Pack unsigned codes LSB-first, e.g. ``[1, 2]`` at 4 bits -> ``b"\\x21"``."""
    arr = np.asarray(codes)
    if arr.ndim != 1:
        raise ValueError("codes must be a 1-D sequence")
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in 1..8, got {bits}")
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << bits)):
        raise ValueError(f"code out of range for {bits} bits")
    row = np.ascontiguousarray(arr.astype(np.uint8).reshape(1, -1))
    return _backend.kernels.pack_rows(row, bits).tobytes()


def unpack_codes(data: bytes, bits: int, count: int) -> np.ndarray:
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in 1..8, got {bits}")
    need = packed_size(count, bits)
    if len(data) < need:
        raise ValueError(f"truncated code stream: {len(data)} bytes, need {need}")
    buf = np.frombuffer(bytes(data[:need]), dtype=np.uint8).reshape(1, need)
    return _backend.kernels.unpack_rows(np.ascontiguousarray(buf), bits, count)[0]


def quantize_group(values, cfg) -> QuantizedGroup:
    """Min-max round-to-nearest quantization of one group.

    ``cfg`` is a :class:`QuantConfig` or a bare bit-width; with a config the
    length must fit the group size (or be a whole number of groups).
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("values contain NaN or Inf")
    if isinstance(cfg, QuantConfig) and v.size > cfg.group_size and v.size % cfg.group_size:
        raise ValueError(f"{v.size} values do not fit group size {cfg.group_size}")
    bits = _bits_of(cfg)
    codes, scale, offset = _backend.kernels.quantize_columns(
        np.ascontiguousarray(v.reshape(-1, 1)), bits)
    packed = _backend.kernels.pack_rows(np.ascontiguousarray(codes.T), bits)
    return QuantizedGroup(bits, float(scale[0]), float(offset[0]), v.size, packed[0].tobytes())


def dequantize_group(g: QuantizedGroup) -> np.ndarray:
    codes = unpack_codes(g.codes, g.bits, g.count)
    if g.scale == 0.0 and np.any(codes):
        raise ValueError("zero-scale group carries non-zero codes")
    return g.scale * codes.astype(np.float64) + g.offset


def quantize_rows(w, cfg: QuantConfig):
    """Quantize every ``group_size`` x 1 slice of ``w`` (groups run down rows).

    Returns ``(groups, dequantized)``; groups are ordered by row-block, then
    by output column.
    """
    w = as_matrix(w, "w")
    n, m = w.shape
    groups: list[QuantizedGroup] = []
    deq = np.empty_like(w)
    kern = _backend.kernels
    for start in range(0, n, cfg.group_size):
        block = np.ascontiguousarray(w[start:start + cfg.group_size])
        codes, scale, offset = kern.quantize_columns(block, cfg.bits)
        packed = kern.pack_rows(np.ascontiguousarray(codes.T), cfg.bits)
        rows = block.shape[0]
        for j in range(m):
            groups.append(QuantizedGroup(cfg.bits, float(scale[j]), float(offset[j]),
                                         rows, packed[j].tobytes()))
        deq[start:start + rows] = scale * codes.astype(np.float64) + offset
    return groups, deq


def dequantize_rows(groups, n_rows: int, n_cols: int, group_size: int) -> np.ndarray:
    """Rebuild the matrix produced by :func:`quantize_rows` from its groups."""
    out = np.empty((n_rows, n_cols))
    n_blocks = -(-n_rows // group_size) if n_rows else 0
    if len(groups) != n_blocks * n_cols:
        raise ValueError(f"expected {n_blocks * n_cols} groups, got {len(groups)}")
    kern = _backend.kernels
    for b in range(n_blocks):
        start = b * group_size
        rows = min(group_size, n_rows - start)
        chunk = groups[b * n_cols:(b + 1) * n_cols]
        bits = chunk[0].bits if chunk else 4
        for g in chunk:
            if g.count != rows or g.bits != bits:
                raise ValueError("group shape does not match the row layout")
        buf = np.frombuffer(b"".join(g.codes for g in chunk), dtype=np.uint8)
        codes = kern.unpack_rows(np.ascontiguousarray(buf.reshape(n_cols, -1)), bits, rows).T
        scale = np.array([g.scale for g in chunk])
        offset = np.array([g.offset for g in chunk])
        if np.any((scale == 0.0) & codes.any(axis=0)):
            raise ValueError("zero-scale group carries non-zero codes")
        out[start:start + rows] = scale * codes.astype(np.float64) + offset
    return out


def rtn_quantize(w, cfg: QuantConfig) -> np.ndarray:
    """Plain per-group RTN: the dequantized matrix only."""
    return quantize_rows(w, cfg)[1]


def awq_scales_from_means(mean_abs, alpha: float) -> ScalingVector:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    mean_abs = np.asarray(mean_abs, dtype=np.float64)
    s = np.maximum(mean_abs ** alpha, SCALE_FLOOR)
    return ScalingVector(s, float(alpha))


def awq_channel_scales(calib, alpha: float = 0.5) -> ScalingVector:
    """Per-input-channel scales ``mean(|x_j|) ** alpha``, floored at 1e-8."""
    x = as_matrix(calib, "calib")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError("empty calibration matrix")
    return awq_scales_from_means(np.mean(np.abs(x), axis=0), alpha)


def awq_layer_error(w, gram_matrix, scales: ScalingVector, cfg: QuantConfig) -> float:
    """Squared output error ``||X (W - D^-1 Q(D W))||_F^2`` computed from ``X^T X``."""
    s = scales.per_channel_scale
    err = w - rtn_quantize(s[:, None] * w, cfg) / s[:, None]
    return float(np.einsum("ij,ik,kj->", err, gram_matrix, err))


def awq_search(w, gram_matrix, mean_abs, cfg: QuantConfig, grid=AWQ_ALPHA_GRID):
    """Pick the exponent in ``grid`` with the smallest layer output error.

    Returns ``(best ScalingVector, {alpha: error})``; ties go to the earlier
    grid entry.
    """
    w = as_matrix(w, "w")
    errors = {}
    best = None
    for alpha in grid:
        sv = awq_scales_from_means(mean_abs, alpha)
        errors[alpha] = awq_layer_error(w, gram_matrix, sv, cfg)
        if best is None or errors[alpha] < errors[best.alpha]:
            best = sv
    return best, errors
