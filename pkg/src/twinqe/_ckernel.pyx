# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pulse kernels. Must stay bit-identical to ``_pykernel``."""

import numpy as np

from libc.stdint cimport uint8_t, uint64_t

cdef extern from *:
    """
    #include <stdint.h>
    static inline void twinqe_mulhilo64(uint64_t a, uint64_t b, uint64_t *hi, uint64_t *lo) {
        unsigned __int128 p = (unsigned __int128)a * (unsigned __int128)b;
        *hi = (uint64_t)(p >> 64);
        *lo = (uint64_t)p;
    }
    """
    void twinqe_mulhilo64(uint64_t a, uint64_t b, uint64_t *hi, uint64_t *lo) nogil

cdef uint64_t M0 = 0xD2E7470EE14C6C93ULL
cdef uint64_t M1 = 0xCA5A826395121157ULL
cdef uint64_t W0 = 0x9E3779B97F4A7C15ULL
cdef uint64_t W1 = 0xBB67AE8584CAA73BULL
cdef double TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53

BACKEND = "cython"


cdef inline void _philox(uint64_t *c, uint64_t k0, uint64_t k1) noexcept nogil:
    cdef uint64_t hi0, lo0, hi1, lo1, x0, x1, x2, x3
    cdef int r
    x0 = c[0]; x1 = c[1]; x2 = c[2]; x3 = c[3]
    for r in range(10):
        twinqe_mulhilo64(M0, x0, &hi0, &lo0)
        twinqe_mulhilo64(M1, x2, &hi1, &lo1)
        x0 = hi1 ^ x1 ^ k0
        x1 = lo1
        x2 = hi0 ^ x3 ^ k1
        x3 = lo0
        k0 = k0 + W0
        k1 = k1 + W1
    c[0] = x0; c[1] = x1; c[2] = x2; c[3] = x3


def philox4x64(uint64_t[:, ::1] counters, uint64_t key0, uint64_t key1):
    """Philox4x64-10 applied row-wise to an ``(n, 4)`` counter array."""
    cdef Py_ssize_t n = counters.shape[0], j
    out = np.empty((n, 4), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef uint64_t c[4]
    with nogil:
        for j in range(n):
            c[0] = counters[j, 0]; c[1] = counters[j, 1]
            c[2] = counters[j, 2]; c[3] = counters[j, 3]
            _philox(c, key0, key1)
            o[j, 0] = c[0]; o[j, 1] = c[1]; o[j, 2] = c[2]; o[j, 3] = c[3]
    return out


def simulate_block(
    uint64_t key0,
    uint64_t key1,
    uint64_t start,
    Py_ssize_t n,
    const double[::1] cdf,
    const double[::1] table_s,
    const double[::1] table_i,
    uint8_t[::1] out_s,
    uint8_t[::1] out_i,
):
    """Fill ``out_s``/``out_i`` with the clicks of pulses ``start .. start+n-1``."""
    cdef Py_ssize_t j, m
    cdef uint64_t c[4]
    cdef double u
    if cdf.shape[0] == 0 or table_s.shape[0] < cdf.shape[0] or table_i.shape[0] < cdf.shape[0]:
        raise ValueError("table shapes do not match the photon-number CDF")
    if out_s.shape[0] < n or out_i.shape[0] < n:
        raise ValueError("output buffers too short")
    with nogil:
        for j in range(n):
            c[0] = start + <uint64_t>j; c[1] = 0; c[2] = 0; c[3] = 0
            _philox(c, key0, key1)
            u = <double>(c[0] >> 11) * TO_UNIT
            m = 0
            while u >= cdf[m]:
                m += 1
            out_s[j] = 1 if <double>(c[1] >> 11) * TO_UNIT < table_s[m] else 0
            out_i[j] = 1 if <double>(c[2] >> 11) * TO_UNIT < table_i[m] else 0
