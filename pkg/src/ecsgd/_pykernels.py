"""Pure-numpy kernels, drop-in twins of the compiled ``_ckernels``."""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0


def _philox_rounds(k0, k1, c0, c1, c2, c3):
    for _ in range(10):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ np.uint64(k0),
            p1 & _LO32,
            (p0 >> _S32) ^ c3 ^ np.uint64(k1),
            p0 & _LO32,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def philox_block(key, c0, c1, c2, c3):
    out = _philox_rounds(
        key & 0xFFFFFFFF,
        key >> 32,
        np.array([c0], dtype=np.uint64),
        np.uint64(c1),
        np.uint64(c2),
        np.uint64(c3),
    )
    return tuple(int(w[0]) for w in out)


def philox_uniform(key, c1, c2, c3, count, offset=0):
    if count < 0 or offset < 0:
        raise ValueError("count and offset must be non-negative")
    if (offset + count + 1) // 2 > 0xFFFFFFFF:
        raise ValueError("stream exhausted: more than 2**33 draws requested")
    if count == 0:
        return np.empty(0, dtype=np.float64)
    first = offset // 2
    last = (offset + count - 1) // 2
    blocks = np.arange(first, last + 1, dtype=np.uint64)
    w0, w1, w2, w3 = _philox_rounds(
        key & 0xFFFFFFFF,
        key >> 32,
        blocks,
        np.full_like(blocks, c1),
        np.full_like(blocks, c2),
        np.full_like(blocks, c3),
    )
    words = np.empty(2 * blocks.size, dtype=np.uint64)
    words[0::2] = (w0 << _S32) | w1
    words[1::2] = (w2 << _S32) | w3
    start = offset - 2 * first
    words = words[start : start + count]
    return (words >> _S11).astype(np.float64) * _TWO_M53


def topk_indices(v, k):
    d = v.shape[0]
    if k >= d:
        return np.arange(d, dtype=np.int64)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    # stable sort on -|v| keeps the lowest index first among equal magnitudes
    order = np.argsort(-np.abs(v), kind="stable")[:k]
    return np.sort(order).astype(np.int64)


def sign_bits(v):
    return (v >= 0.0).astype(np.uint8)


def ternary_codes(v, m_abs, u):
    if u.shape[0] != v.shape[0]:
        raise ValueError("uniform draw length must equal vector length")
    fire = u < np.abs(v) / m_abs
    return np.where(fire, np.where(v > 0.0, 1, -1), 0).astype(np.int8)


def quantize_codes(v, lo, step, levels, u):
    if u.shape[0] != v.shape[0]:
        raise ValueError("uniform draw length must equal vector length")
    p = (v - lo) / step
    a = np.clip(np.floor(p), 0.0, float(levels - 2))
    frac = p - a
    return a.astype(np.int64) + (u < frac).astype(np.int64)


def clip_low_bits(v, m):
    if m < 0 or m > 52:
        raise ValueError("mantissa_bits_zeroed must lie in [0, 52]")
    mask = np.uint64(~((1 << m) - 1) & 0xFFFFFFFFFFFFFFFF)
    return (np.ascontiguousarray(v, dtype=np.float64).view(np.uint64) & mask).view(np.float64)
