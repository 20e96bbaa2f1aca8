"""Binary tensor (RQTF) and mixed-precision weight (RQQF) file formats.

All integers and floats are little-endian.

RQTF::

    b"RQTF" | u32 version=1 | u32 dtype (0 = binary32) | u32 ndim
    | u64 dims[ndim] | binary32 payload, row-major

RQQF::

    b"RQQF" | u32 version=1 | u32 bits | u32 group_size | u32 n_in | u32 n_out
    | u32 n_salient | u32 flags (bit 0: rotation absorbed upstream)
    | u32 permutation[n_in]
    | binary32 salient[n_salient * n_out], row-major
    | n_blocks * n_out group records, block-major then column:
        binary32 scale | binary32 offset | packed codes

Row-block ``b`` holds ``min(group_size, n_in - n_salient - b*group_size)``
codes per column, packed LSB-first and padded to a whole byte.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from ..errors import FormatError
from ..linalg import EigenDecomposition
from ..pipeline.mixed import MixedPrecisionWeight
from ..quant import QuantConfig, QuantizedGroup, packed_size

TENSOR_MAGIC = b"RQTF"
QUANT_MAGIC = b"RQQF"
VERSION = 1
DTYPE_F32 = 0
FLAG_ABSORBED = 1
_QHEAD = struct.Struct("<4s7I")


def atomic_write(path, data: bytes):
    """Write ``data`` to a temp file in the target directory, then rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(arr) -> bytes:
    a = np.asarray(arr)
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains NaN or Inf")
    head = TENSOR_MAGIC + struct.pack("<3I", VERSION, DTYPE_F32, a.ndim)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    """Decode an RQTF blob to a binary32 array."""
    if len(data) < 16 or data[:4] != TENSOR_MAGIC:
        raise FormatError("not an RQTF tensor file (bad magic)")
    version, dtype, ndim = struct.unpack_from("<3I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported RQTF version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported RQTF dtype code {dtype}")
    if len(data) < 16 + 8 * ndim:
        raise FormatError("truncated RQTF header")
    dims = struct.unpack_from(f"<{ndim}Q", data, 16)
    start = 16 + 8 * ndim
    n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(data) - start != 4 * n:
        raise FormatError(f"RQTF payload is {len(data) - start} bytes, expected {4 * n}")
    return np.frombuffer(data, dtype="<f4", offset=start, count=n).reshape(dims).astype(np.float32)


def tensor_header(data: bytes) -> dict:
    arr = decode_tensor(data)
    return {"format": "RQTF", "version": VERSION, "dtype": "binary32", "shape": list(arr.shape)}


def write_tensor(path, arr):
    atomic_write(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    """Read an RQTF file and widen it to float64."""
    with open(path, "rb") as fh:
        return decode_tensor(fh.read()).astype(np.float64)


def quantfile_size(n_in: int, n_out: int, n_salient: int, bits: int, group_size: int) -> int:
    """Exact byte length of an RQQF file with the given shape."""
    size = _QHEAD.size + 4 * n_in + 4 * n_salient * n_out
    rest = n_in - n_salient
    for start in range(0, rest, group_size):
        rows = min(group_size, rest - start)
        size += n_out * (8 + packed_size(rows, bits))
    return size


def encode_quant(w: MixedPrecisionWeight) -> bytes:
    flags = FLAG_ABSORBED if w.absorbed else 0
    parts = [_QHEAD.pack(QUANT_MAGIC, VERSION, w.cfg.bits, w.cfg.group_size,
                         w.n_in, w.n_out, w.k, flags),
             np.asarray(w.permutation, dtype="<u4").tobytes(),
             np.ascontiguousarray(w.salient, dtype="<f4").tobytes()]
    rec = struct.Struct("<2f")
    for g in w.groups:
        parts.append(rec.pack(g.scale, g.offset))
        parts.append(g.codes)
    return b"".join(parts)


def quant_header(data: bytes) -> dict:
    if len(data) < _QHEAD.size or data[:4] != QUANT_MAGIC:
        raise FormatError("not an RQQF quantized-weight file (bad magic)")
    _, version, bits, gs, n_in, n_out, k, flags = _QHEAD.unpack_from(data, 0)
    if version != VERSION:
        raise FormatError(f"unsupported RQQF version {version}")
    return {"format": "RQQF", "version": version, "bits": bits, "group_size": gs,
            "n_in": n_in, "n_out": n_out, "n_salient": k, "absorbed": bool(flags & FLAG_ABSORBED)}


def decode_quant(data: bytes, rotation: EigenDecomposition | None = None) -> MixedPrecisionWeight:
    h = quant_header(data)
    n_in, n_out, k, bits, gs = h["n_in"], h["n_out"], h["n_salient"], h["bits"], h["group_size"]
    expected = quantfile_size(n_in, n_out, k, bits, gs)
    if len(data) != expected:
        raise FormatError(f"RQQF file is {len(data)} bytes, expected {expected}")
    try:
        cfg = QuantConfig(bits, gs)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    pos = _QHEAD.size
    perm = np.frombuffer(data, dtype="<u4", count=n_in, offset=pos).astype(np.int64)
    pos += 4 * n_in
    salient = np.frombuffer(data, dtype="<f4", count=k * n_out, offset=pos)
    salient = salient.astype(np.float64).reshape(k, n_out)
    pos += 4 * k * n_out
    groups = []
    rest = n_in - k
    for start in range(0, rest, gs):
        rows = min(gs, rest - start)
        nb = packed_size(rows, bits)
        for _ in range(n_out):
            scale, offset = struct.unpack_from("<2f", data, pos)
            pos += 8
            groups.append(QuantizedGroup(bits, scale, offset, rows, bytes(data[pos:pos + nb])))
            pos += nb
    try:
        return MixedPrecisionWeight(rotation, salient, tuple(groups), perm, cfg, n_in, n_out,
                                    h["absorbed"])
    except ValueError as exc:
        raise FormatError(f"RQQF content is inconsistent: {exc}") from None


def write_quant(path, w: MixedPrecisionWeight):
    atomic_write(path, encode_quant(w))


def read_quant(path, rotation: EigenDecomposition | None = None) -> MixedPrecisionWeight:
    with open(path, "rb") as fh:
        return decode_quant(fh.read(), rotation)
