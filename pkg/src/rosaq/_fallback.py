"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``.

Each function mirrors its compiled twin operation for operation, so both
backends produce the same codes and (up to summation order in the Jacobi
stopping test) the same decompositions.
"""

from __future__ import annotations

import numpy as np


def jacobi_sweeps(a: np.ndarray, max_sweeps: int, stop_rel: float):
    n = a.shape[0]
    vt = np.eye(n, dtype=np.float64)
    stop = stop_rel * stop_rel * float(np.sum(a * a))
    iu = np.triu_indices(n, k=1)
    sweep = 0
    while True:
        off = float(np.sum(a[iu] ** 2))
        if off == 0.0 or off <= stop:
            return vt, sweep, True
        if sweep >= max_sweeps:
            return vt, sweep, False
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                h = t * apq
                arp = a[p].copy()
                arq = a[q].copy()
                new_p = arp - s * (arq + tau * arp)
                new_q = arq + s * (arp - tau * arq)
                new_p[p] = app - h
                new_q[q] = aqq + h
                new_p[q] = 0.0
                new_q[p] = 0.0
                a[p] = new_p
                a[q] = new_q
                a[:, p] = new_p
                a[:, q] = new_q
                g = vt[p].copy()
                hv = vt[q].copy()
                vt[p] = g - s * (hv + tau * g)
                vt[q] = hv + s * (g - tau * hv)


def quantize_columns(w: np.ndarray, bits: int):
    n, m = w.shape
    codes = np.zeros((n, m), dtype=np.uint8)
    if n == 0:
        return codes, np.zeros(m), np.zeros(m)
    levels = float((1 << bits) - 1)
    lo = w.min(axis=0)
    hi = w.max(axis=0)
    live = hi != lo
    scale = np.where(live, (hi - lo) / levels, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.floor((w - lo) / scale + 0.5)
    raw = np.clip(raw, 0.0, levels)
    codes[:, live] = raw[:, live].astype(np.uint8)
    return codes, scale, lo.astype(np.float64)


def pack_rows(codes: np.ndarray, bits: int) -> np.ndarray:
    rows, count = codes.shape
    nbytes = (count * bits + 7) // 8
    shifts = np.arange(bits, dtype=np.uint8)
    bitplane = (codes[:, :, None] >> shifts) & 1
    stream = bitplane.reshape(rows, count * bits).astype(np.uint8)
    packed = np.packbits(stream, axis=1, bitorder="little")
    return np.ascontiguousarray(packed[:, :nbytes])


def unpack_rows(packed: np.ndarray, bits: int, count: int) -> np.ndarray:
    rows = packed.shape[0]
    stream = np.unpackbits(packed, axis=1, count=count * bits, bitorder="little")
    weights = (1 << np.arange(bits)).astype(np.uint8)
    planes = stream.reshape(rows, count, bits)
    return (planes * weights).sum(axis=2, dtype=np.uint16).astype(np.uint8)
