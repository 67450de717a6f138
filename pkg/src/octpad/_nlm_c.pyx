# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled non-local means kernel.

Exactness contract (shared with the pure-Python backend and the naive
reference formula): patch distances are integer sums of squared differences,
the weight for an integer distance sum S is ``exp(-((S / area) / h^2))``
evaluated by libm, and per-pixel accumulation runs over search offsets in
row-major order.  Given the same padded input, every backend therefore
produces bit-identical float64 sums and the same rounded uint8 output.

The only optimization is algebraic: per search offset, template distances are
sliding-window sums of the squared-difference image (exact in int64), and
weights come from a table indexed by the distance sum (filled once with libm
``exp``).  Neither changes any computed value.
"""

from libc.math cimport exp, floor

import numpy as np

cimport numpy as cnp

cnp.import_array()

# Above this table size (entries), weights are computed directly per pixel.
DEF MAX_TABLE_ENTRIES = 8388608


def nlm_denoise_padded(const cnp.uint8_t[:, ::1] padded, int height, int width,
                       int template_radius, int search_radius, double h):
    """Denoise the core ``height x width`` region of a reflect-padded image.

    ``padded`` must have shape ``(height + 2*pad, width + 2*pad)`` with
    ``pad = search_radius + template_radius``.  Returns a uint8 array.
    """
    cdef int tr = template_radius
    cdef int sr = search_radius
    cdef int pad = sr + tr
    cdef int t = 2 * tr + 1
    cdef int area = t * t
    cdef double h2 = h * h
    cdef cnp.int64_t smax = <cnp.int64_t> area * 65025
    cdef bint use_table = smax + 1 <= MAX_TABLE_ENTRIES

    if padded.shape[0] != height + 2 * pad or padded.shape[1] != width + 2 * pad:
        raise ValueError("padded image has wrong shape")

    cdef cnp.ndarray table_arr
    cdef double[::1] table = None
    cdef cnp.int64_t s
    if use_table:
        table_arr = np.empty(smax + 1, dtype=np.float64)
        table = table_arr
        for s in range(smax + 1):
            table[s] = exp(-((<double> s) / (<double> area)) / h2)

    cdef cnp.ndarray num_arr = np.zeros((height, width), dtype=np.float64)
    cdef cnp.ndarray den_arr = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] num = num_arr
    cdef double[:, ::1] den = den_arr

    # Squared differences are needed on the template-dilated region.
    cdef int dh = height + 2 * tr
    cdef int dw = width + 2 * tr
    cdef cnp.ndarray dsq_arr = np.empty((dh, dw), dtype=np.int32)
    cdef cnp.ndarray hsum_arr = np.empty((dh, width), dtype=np.int64)
    cdef cnp.ndarray col_arr = np.empty(width, dtype=np.int64)
    cdef int[:, ::1] dsq = dsq_arr
    cdef cnp.int64_t[:, ::1] hsum = hsum_arr
    cdef cnp.int64_t[::1] colsum = col_arr

    cdef int dy, dx, i, j, d
    cdef cnp.int64_t acc
    cdef double w

    for dy in range(-sr, sr + 1):
        for dx in range(-sr, sr + 1):
            # dsq[i, j] = (padded[b+i, b+j] - padded[b+i+dy, b+j+dx])^2,
            # b = pad - tr
            for i in range(dh):
                for j in range(dw):
                    d = (<int> padded[pad - tr + i, pad - tr + j]
                         - <int> padded[pad - tr + i + dy, pad - tr + j + dx])
                    dsq[i, j] = d * d
            # horizontal sliding sums of width t
            for i in range(dh):
                acc = 0
                for j in range(t):
                    acc += dsq[i, j]
                hsum[i, 0] = acc
                for j in range(1, width):
                    acc += dsq[i, j + t - 1] - dsq[i, j - 1]
                    hsum[i, j] = acc
            # vertical sliding sums, consumed row by row
            for j in range(width):
                acc = 0
                for i in range(t):
                    acc += hsum[i, j]
                colsum[j] = acc
            if use_table:
                for j in range(width):
                    w = table[colsum[j]]
                    num[0, j] += w * <double> padded[pad + dy, pad + j + dx]
                    den[0, j] += w
                for i in range(1, height):
                    for j in range(width):
                        colsum[j] += hsum[i + t - 1, j] - hsum[i - 1, j]
                        w = table[colsum[j]]
                        num[i, j] += w * <double> padded[pad + i + dy, pad + j + dx]
                        den[i, j] += w
            else:
                for j in range(width):
                    w = exp(-((<double> colsum[j]) / (<double> area)) / h2)
                    num[0, j] += w * <double> padded[pad + dy, pad + j + dx]
                    den[0, j] += w
                for i in range(1, height):
                    for j in range(width):
                        colsum[j] += hsum[i + t - 1, j] - hsum[i - 1, j]
                        w = exp(-((<double> colsum[j]) / (<double> area)) / h2)
                        num[i, j] += w * <double> padded[pad + i + dy, pad + j + dx]
                        den[i, j] += w

    cdef cnp.ndarray out_arr = np.empty((height, width), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef double v
    for i in range(height):
        for j in range(width):
            v = floor(num[i, j] / den[i, j] + 0.5)
            if v < 0.0:
                v = 0.0
            elif v > 255.0:
                v = 255.0
            out[i, j] = <cnp.uint8_t> v
    return out_arr
