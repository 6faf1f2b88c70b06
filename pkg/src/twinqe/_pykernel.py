"""Pure numpy fallback for the compiled kernels.

Integer and comparison operations only, so the output matches the compiled
backend bit for bit.
"""
import numpy as np

BACKEND = "python"

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = 0x9E3779B97F4A7C15
_W1 = 0xBB67AE8584CAA73B
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_MASK64 = (1 << 64) - 1
_TO_UNIT = 1.0 / 9007199254740992.0


def _mulhilo(m, x):
    """128-bit product of a scalar ``m`` and array ``x`` as (hi, lo) uint64 arrays."""
    m_lo, m_hi = m & _MASK32, m >> _S32
    x_lo, x_hi = x & _MASK32, x >> _S32
    ll = x_lo * m_lo
    lh = x_lo * m_hi
    hl = x_hi * m_lo
    hh = x_hi * m_hi
    mid = (ll >> _S32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, x * m


def _philox_arrays(x0, x1, x2, x3, key0, key1):
    k0, k1 = int(key0), int(key1)
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo(_M0, x0)
            hi1, lo1 = _mulhilo(_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ np.uint64(k0), lo1, hi0 ^ x3 ^ np.uint64(k1), lo0
            k0 = (k0 + _W0) & _MASK64
            k1 = (k1 + _W1) & _MASK64
    return x0, x1, x2, x3


def philox4x64(counters, key0, key1):
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    words = _philox_arrays(*(counters[:, j] for j in range(4)), key0, key1)
    return np.stack(words, axis=1)


def simulate_block(key0, key1, start, n, cdf, table_s, table_i, out_s, out_i):
    if len(cdf) == 0 or len(table_s) < len(cdf) or len(table_i) < len(cdf):
        raise ValueError("table shapes do not match the photon-number CDF")
    if len(out_s) < n or len(out_i) < n:
        raise ValueError("output buffers too short")
    ctr = np.arange(n, dtype=np.uint64) + np.uint64(start)
    zero = np.zeros(n, dtype=np.uint64)
    w0, w1, w2, _ = _philox_arrays(ctr, zero, zero, zero, key0, key1)
    u = (w0 >> _S11).astype(np.float64) * _TO_UNIT
    # first index m with u < cdf[m]; same as the compiled linear scan
    m = np.searchsorted(np.asarray(cdf), u, side="right")
    out_s[:n] = (w1 >> _S11).astype(np.float64) * _TO_UNIT < np.asarray(table_s)[m]
    out_i[:n] = (w2 >> _S11).astype(np.float64) * _TO_UNIT < np.asarray(table_i)[m]
