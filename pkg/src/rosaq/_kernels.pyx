# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Every function here has a twin in ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, floor

cnp.import_array()


def jacobi_sweeps(double[:, ::1] a, int max_sweeps, double stop_rel):
    """Cyclic Jacobi on a symmetric matrix, in place.

    Returns ``(vt, sweeps, converged)`` where row ``j`` of ``vt`` is the
    eigenvector paired with ``a[j, j]``.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p, q, r
    cdef double apq, app, aqq, theta, t, c, s, tau, h, arp, arq, g, off, total
    cdef int sweep = 0
    vt_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] vt = vt_arr

    total = 0.0
    for p in range(n):
        for q in range(n):
            total += a[p, q] * a[p, q]
    cdef double stop = stop_rel * stop_rel * total

    while True:
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off == 0.0 or off <= stop or sweep >= max_sweeps:
            for p in range(n - 1):
                for q in range(p + 1, n):
                    a[q, p] = a[p, q]
            return vt_arr, sweep, off == 0.0 or off <= stop
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                h = t * apq
                # only the upper triangle (row < col) is kept current
                for r in range(p):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = arp - s * (arq + tau * arp)
                    a[r, q] = arq + s * (arp - tau * arq)
                for r in range(p + 1, q):
                    arp = a[p, r]
                    arq = a[r, q]
                    a[p, r] = arp - s * (arq + tau * arp)
                    a[r, q] = arq + s * (arp - tau * arq)
                for r in range(q + 1, n):
                    arp = a[p, r]
                    arq = a[q, r]
                    a[p, r] = arp - s * (arq + tau * arp)
                    a[q, r] = arq + s * (arp - tau * arq)
                a[p, p] = app - h
                a[q, q] = aqq + h
                a[p, q] = 0.0
                for r in range(n):
                    g = vt[p, r]
                    h = vt[q, r]
                    vt[p, r] = g - s * (h + tau * g)
                    vt[q, r] = h + s * (g - tau * h)


def quantize_columns(double[:, ::1] w, int bits):
    """Min-max RTN per column of ``w``; returns ``(codes, scale, offset)``."""
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t m = w.shape[1]
    cdef Py_ssize_t i, j
    cdef double lo, hi, sc, v, levels = (1 << bits) - 1
    cdef long code
    codes_arr = np.zeros((n, m), dtype=np.uint8)
    scale_arr = np.zeros(m, dtype=np.float64)
    offset_arr = np.zeros(m, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] codes = codes_arr
    cdef double[::1] scale = scale_arr
    cdef double[::1] offset = offset_arr
    if n == 0:
        return codes_arr, scale_arr, offset_arr
    for j in range(m):
        lo = w[0, j]
        hi = w[0, j]
        for i in range(1, n):
            v = w[i, j]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        offset[j] = lo
        if hi == lo:
            scale[j] = 0.0
            continue
        sc = (hi - lo) / levels
        scale[j] = sc
        for i in range(n):
            code = <long>floor((w[i, j] - lo) / sc + 0.5)
            if code < 0:
                code = 0
            elif code > <long>levels:
                code = <long>levels
            codes[i, j] = <cnp.uint8_t>code
    return codes_arr, scale_arr, offset_arr


def pack_rows(const cnp.uint8_t[:, ::1] codes, int bits):
    """Pack each row of ``codes`` into its own LSB-first bit stream."""
    cdef Py_ssize_t rows = codes.shape[0]
    cdef Py_ssize_t count = codes.shape[1]
    cdef Py_ssize_t nbytes = (count * bits + 7) // 8
    cdef Py_ssize_t i, k, pos
    cdef unsigned int acc
    cdef int filled
    out_arr = np.zeros((rows, nbytes), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef unsigned int mask = (1u << bits) - 1u
    for i in range(rows):
        acc = 0
        filled = 0
        pos = 0
        for k in range(count):
            acc |= (codes[i, k] & mask) << filled
            filled += bits
            while filled >= 8:
                out[i, pos] = acc & 0xFF
                acc >>= 8
                filled -= 8
                pos += 1
        if filled > 0:
            out[i, pos] = acc & 0xFF
    return out_arr


def unpack_rows(const cnp.uint8_t[:, ::1] packed, int bits, Py_ssize_t count):
    """Inverse of :func:`pack_rows` for ``count`` codes per row."""
    cdef Py_ssize_t rows = packed.shape[0]
    cdef Py_ssize_t i, k, pos
    cdef unsigned int acc
    cdef int filled
    cdef unsigned int mask = (1u << bits) - 1u
    out_arr = np.zeros((rows, count), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    for i in range(rows):
        acc = 0
        filled = 0
        pos = 0
        for k in range(count):
            while filled < bits:
                acc |= (<unsigned int>packed[i, pos]) << filled
                pos += 1
                filled += 8
            out[i, k] = acc & mask
            acc >>= bits
            filled -= bits
    return out_arr
