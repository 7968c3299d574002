# cython: language_level=3
"""Compiled hot kernels.

Every function here has a numpy twin in ``_pykernels`` and must return
bit-identical results; only IEEE-exact operations (+, -, *, /, floor,
comparisons, integer ops) are used so the two backends cannot drift.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs
from libc.stdint cimport uint32_t, uint64_t, int64_t, int8_t, uint8_t

cnp.import_array()

cdef uint64_t PHILOX_M0 = 0xD2511F53
cdef uint64_t PHILOX_M1 = 0xCD9E8D57
cdef uint32_t PHILOX_W0 = 0x9E3779B9
cdef uint32_t PHILOX_W1 = 0xBB67AE85
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline void _philox_block(uint32_t k0, uint32_t k1, uint32_t c0, uint32_t c1,
                               uint32_t c2, uint32_t c3, uint32_t* out) nogil:
    cdef uint64_t p0, p1
    cdef uint32_t n0, n2
    cdef int r
    for r in range(10):
        p0 = <uint64_t>c0 * PHILOX_M0
        p1 = <uint64_t>c2 * PHILOX_M1
        n0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        n2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        c1 = <uint32_t>p1
        c3 = <uint32_t>p0
        c0 = n0
        c2 = n2
        k0 = k0 + PHILOX_W0
        k1 = k1 + PHILOX_W1
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


def philox_block(uint64_t key, uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3):
    cdef uint32_t out[4]
    _philox_block(<uint32_t>(key & 0xFFFFFFFF), <uint32_t>(key >> 32), c0, c1, c2, c3, out)
    return (out[0], out[1], out[2], out[3])


def philox_uniform(uint64_t key, uint32_t c1, uint32_t c2, uint32_t c3,
                   Py_ssize_t count, Py_ssize_t offset=0):
    if count < 0 or offset < 0:
        raise ValueError("count and offset must be non-negative")
    if (offset + count + 1) // 2 > 0xFFFFFFFF:
        raise ValueError("stream exhausted: more than 2**33 draws requested")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] res = np.empty(count, dtype=np.float64)
    cdef double* r = <double*>res.data
    cdef uint32_t k0 = <uint32_t>(key & 0xFFFFFFFF)
    cdef uint32_t k1 = <uint32_t>(key >> 32)
    cdef uint32_t out[4]
    cdef Py_ssize_t j, pos
    cdef uint64_t word
    cdef uint32_t cur_block = 0
    cdef bint have = False
    with nogil:
        for j in range(count):
            pos = offset + j
            if not have or <uint32_t>(pos >> 1) != cur_block:
                cur_block = <uint32_t>(pos >> 1)
                _philox_block(k0, k1, cur_block, c1, c2, c3, out)
                have = True
            if pos & 1:
                word = (<uint64_t>out[2] << 32) | out[3]
            else:
                word = (<uint64_t>out[0] << 32) | out[1]
            r[j] = <double>(word >> 11) * TWO_M53
    return res


cdef inline bint _worse(double a, int64_t ia, double b, int64_t ib) nogil:
    # True when (a, ia) ranks below (b, ib): smaller magnitude, or equal and later index
    return a < b or (a == b and ia > ib)


cdef void _sift_down(double* key, int64_t* idx, Py_ssize_t n, Py_ssize_t i) nogil:
    cdef Py_ssize_t child, worst
    cdef double tk
    cdef int64_t ti
    while True:
        child = 2 * i + 1
        if child >= n:
            return
        worst = i
        if _worse(key[child], idx[child], key[worst], idx[worst]):
            worst = child
        if child + 1 < n and _worse(key[child + 1], idx[child + 1], key[worst], idx[worst]):
            worst = child + 1
        if worst == i:
            return
        tk = key[i]; key[i] = key[worst]; key[worst] = tk
        ti = idx[i]; idx[i] = idx[worst]; idx[worst] = ti
        i = worst


def topk_indices(const double[::1] v, Py_ssize_t k):
    cdef Py_ssize_t d = v.shape[0]
    if k >= d:
        return np.arange(d, dtype=np.int64)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] keys = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(k, dtype=np.int64)
    cdef double* kp = <double*>keys.data
    cdef int64_t* ip = <int64_t*>idx.data
    cdef Py_ssize_t j, i
    cdef double a
    with nogil:
        # min-heap keyed on rank; the root is the weakest kept entry
        for j in range(k):
            kp[j] = fabs(v[j])
            ip[j] = j
        i = k // 2
        while i > 0:
            i -= 1
            _sift_down(kp, ip, k, i)
        for j in range(k, d):
            a = fabs(v[j])
            # a later index only displaces the root on strictly larger magnitude
            if a > kp[0]:
                kp[0] = a
                ip[0] = j
                _sift_down(kp, ip, k, 0)
    idx.sort()
    return idx


def sign_bits(const double[::1] v):
    cdef Py_ssize_t d = v.shape[0], j
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] out = np.empty(d, dtype=np.uint8)
    cdef uint8_t* o = <uint8_t*>out.data
    with nogil:
        for j in range(d):
            o[j] = 1 if v[j] >= 0.0 else 0
    return out


def ternary_codes(const double[::1] v, double m_abs, const double[::1] u):
    cdef Py_ssize_t d = v.shape[0], j
    if u.shape[0] != d:
        raise ValueError("uniform draw length must equal vector length")
    cdef cnp.ndarray[cnp.int8_t, ndim=1] out = np.empty(d, dtype=np.int8)
    cdef int8_t* o = <int8_t*>out.data
    cdef double x
    with nogil:
        for j in range(d):
            x = v[j]
            if u[j] < fabs(x) / m_abs:
                o[j] = 1 if x > 0.0 else -1
            else:
                o[j] = 0
    return out


def quantize_codes(const double[::1] v, double lo, double step, Py_ssize_t levels,
                   const double[::1] u):
    cdef Py_ssize_t d = v.shape[0], j
    if u.shape[0] != d:
        raise ValueError("uniform draw length must equal vector length")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(d, dtype=np.int64)
    cdef int64_t* o = <int64_t*>out.data
    cdef double p, a, frac
    cdef double top = <double>(levels - 2)
    with nogil:
        for j in range(d):
            p = (v[j] - lo) / step
            a = floor(p)
            if a < 0.0:
                a = 0.0
            elif a > top:
                a = top
            frac = p - a
            o[j] = <int64_t>a + (1 if u[j] < frac else 0)
    return out


def clip_low_bits(const double[::1] v, int m):
    if m < 0 or m > 52:
        raise ValueError("mantissa_bits_zeroed must lie in [0, 52]")
    cdef Py_ssize_t d = v.shape[0], j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(d, dtype=np.float64)
    cdef uint64_t* o = <uint64_t*>out.data
    cdef const uint64_t* src = <const uint64_t*>&v[0] if d > 0 else NULL
    cdef uint64_t mask = ~((<uint64_t>1 << m) - 1)
    with nogil:
        for j in range(d):
            o[j] = src[j] & mask
    return out
