"""Compression operators, their wire cost, and a canonical byte encoding.

Bit costs (``bit_cost``) are pure functions of the operator parameters and
the vector dimension (random sparsification: of the kept count):

============== ===========================================
identity       ``wire_bits_per_real * dim`` (64 internally)
one_bit        ``dim + 32``  (sign bitmap + one scale)
top_k          ``min(k, dim) * (32 + ceil(log2 dim))``
ternary        ``2 * dim + 32``
random_quantize``dim * ceil(log2 levels) + 64``  (codes + range)
random_sparsify``kept * (32 + ceil(log2 dim))``
clip           ``dim * (64 - mantissa_bits_zeroed)``
============== ===========================================

``to_bytes`` writes a 17-byte header (kind tag, dim, aux) followed by a
payload of exactly ``ceil(bit_cost / 8)`` bytes. Reals listed as 32-bit
above are stored as float32 on the wire, so a byte round trip is exact for
codes, signs and indices and float32-rounded for scales and values.
"""

import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import CompressionError
from .numerics import as_vector, l2_norm

KINDS = (
    "identity",
    "one_bit",
    "top_k",
    "ternary",
    "random_quantize",
    "random_sparsify",
    "clip",
)
RANDOMIZED = frozenset({"ternary", "random_quantize", "random_sparsify"})
SCALE_MODES = ("norm_ratio", "max_abs")
CLIP_MODES = ("binary", "decimal")


@dataclass(frozen=True)
class CompressorSpec:
    """Which operator to apply and its parameters.

    Only the fields relevant to ``kind`` are consulted; ``k`` for top_k,
    ``levels`` for random_quantize, ``keep_prob`` for random_sparsify,
    ``mantissa_bits_zeroed``/``clip_mode``/``decimal_places`` for clip and
    ``scale_mode`` for ternary.
    """

    kind: str = "identity"
    k: int | None = None
    levels: int | None = None
    keep_prob: float | None = None
    mantissa_bits_zeroed: int | None = None
    scale_mode: str = "norm_ratio"
    clip_mode: str = "binary"
    decimal_places: int = 1

    def __post_init__(self):
        kind = self.kind
        if kind not in KINDS:
            raise CompressionError(f"unknown compressor kind {kind!r}; expected one of {KINDS}")
        if kind == "top_k":
            if not isinstance(self.k, (int, np.integer)) or self.k < 1:
                raise CompressionError(f"top_k requires integer k >= 1, got {self.k!r}")
        elif kind == "random_quantize":
            if not isinstance(self.levels, (int, np.integer)) or self.levels < 2:
                raise CompressionError(f"random_quantize requires integer levels >= 2, got {self.levels!r}")
        elif kind == "random_sparsify":
            p = self.keep_prob
            if p is None or not (0.0 < p <= 1.0):
                raise CompressionError(f"random_sparsify requires keep_prob in (0, 1], got {p!r}")
        elif kind == "clip":
            if self.clip_mode not in CLIP_MODES:
                raise CompressionError(f"clip_mode must be one of {CLIP_MODES}, got {self.clip_mode!r}")
            if self.clip_mode == "binary":
                m = self.mantissa_bits_zeroed
                if not isinstance(m, (int, np.integer)) or not 0 <= m <= 52:
                    raise CompressionError(f"clip requires mantissa_bits_zeroed in [0, 52], got {m!r}")
            elif self.decimal_places < 0:
                raise CompressionError("decimal_places must be >= 0")
        elif kind == "ternary":
            if self.scale_mode not in SCALE_MODES:
                raise CompressionError(f"scale_mode must be one of {SCALE_MODES}, got {self.scale_mode!r}")

    @property
    def randomized(self):
        return self.kind in RANDOMIZED

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(kind=d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise CompressionError(f"unknown compressor field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        full = asdict(self)
        keep = {"kind"}
        keep |= {
            "identity": set(),
            "one_bit": set(),
            "top_k": {"k"},
            "ternary": {"scale_mode"},
            "random_quantize": {"levels"},
            "random_sparsify": {"keep_prob"},
            "clip": {"clip_mode", "mantissa_bits_zeroed", "decimal_places"},
        }[self.kind]
        return {k: v for k, v in full.items() if k in keep}

    def label(self):
        extra = {
            "top_k": f"(k={self.k})",
            "ternary": f"({self.scale_mode})",
            "random_quantize": f"(levels={self.levels})",
            "random_sparsify": f"(p={self.keep_prob})",
            "clip": (
                f"(m={self.mantissa_bits_zeroed})"
                if self.clip_mode == "binary"
                else f"(decimal={self.decimal_places})"
            ),
        }.get(self.kind, "")
        return self.kind + extra


IDENTITY = CompressorSpec("identity")


@dataclass(frozen=True, eq=False)
class CompressedMessage:
    """Wire form of a compressed vector.

    ``payload`` holds the kind-specific arrays and scalars; see
    ``reconstruct`` for how each kind is decoded.
    """

    kind: str
    dim: int
    payload: dict = field(repr=False)
    spec: CompressorSpec = IDENTITY

    @property
    def bit_cost(self):
        return bit_cost(self)


def index_bits(dim):
    """ceil(log2 dim): bits needed to address one of ``dim`` slots."""
    return (int(dim) - 1).bit_length()


def bit_cost(msg, wire_bits_per_real=64):
    """Exact size in bits of ``msg`` under the documented encodings."""
    d = msg.dim
    kind = msg.kind
    if kind == "identity":
        return wire_bits_per_real * d
    if kind == "one_bit":
        return d + 32
    if kind in ("top_k", "random_sparsify"):
        return len(msg.payload["indices"]) * (32 + index_bits(d))
    if kind == "ternary":
        return 2 * d + 32
    if kind == "random_quantize":
        return d * index_bits(msg.payload["levels"]) + 64
    if kind == "clip":
        if msg.payload["mode"] == "decimal":
            return 64 * d
        return d * (64 - msg.payload["m"])
    raise CompressionError(f"unknown message kind {kind!r}")


def nominal_bit_cost(spec, dim, wire_bits_per_real=64):
    """Bit cost of compressing any ``dim``-vector with ``spec``.

    For random_sparsify the kept count is random; the expectation
    ``keep_prob * dim * (32 + ceil(log2 dim))`` is returned.
    """
    kind = spec.kind
    if kind == "identity":
        return wire_bits_per_real * dim
    if kind == "one_bit":
        return dim + 32
    if kind == "top_k":
        return min(spec.k, dim) * (32 + index_bits(dim))
    if kind == "ternary":
        return 2 * dim + 32
    if kind == "random_quantize":
        return dim * index_bits(spec.levels) + 64
    if kind == "random_sparsify":
        return spec.keep_prob * dim * (32 + index_bits(dim))
    if spec.clip_mode == "decimal":
        return 64 * dim
    return dim * (64 - spec.mantissa_bits_zeroed)


# --- operators -------------------------------------------------------------


def _need_rng(rng, kind):
    if rng is None:
        raise CompressionError(f"{kind} is randomized and needs an RngStream")
    return rng


def identity(v):
    v = as_vector(v)
    return CompressedMessage("identity", v.size, {"values": v}, IDENTITY)


def one_bit_quantize(v):
    """Sign bitmap plus scale ``||v|| / ||sign(v)||``; sign(0) is +1."""
    v = as_vector(v)
    d = v.size
    signs = kernels.sign_bits(v)
    # every sign is +-1, so ||sign(v)|| = sqrt(d)
    scale = l2_norm(v) / math.sqrt(d)
    payload = {"signs": np.packbits(signs), "scale": scale}
    return CompressedMessage("one_bit", d, payload, CompressorSpec("one_bit"))


def top_k_sparsify(v, k):
    """Keep the ``k`` largest-magnitude entries; ties go to the lowest index."""
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise CompressionError(f"top_k requires integer k >= 1, got {k!r}")
    v = as_vector(v)
    idx = kernels.topk_indices(v, int(k))
    payload = {"indices": idx, "values": v[idx]}
    return CompressedMessage("top_k", v.size, payload, CompressorSpec("top_k", k=int(k)))


def ternary_quantize(v, scale_mode, rng):
    """Codes in {-1, 0, +1}; entry j fires with probability |v_j| / max|v|.

    ``max_abs`` scales codes by max|v| (unbiased); ``norm_ratio`` by
    ``||v|| / ||codes||``.
    """
    spec = CompressorSpec("ternary", scale_mode=scale_mode)
    v = as_vector(v)
    d = v.size
    m = float(np.max(np.abs(v)))
    if m == 0.0:
        codes = np.zeros(d, dtype=np.int8)
        scale = 0.0
    else:
        u = _need_rng(rng, "ternary").uniform(d)
        codes = kernels.ternary_codes(v, m, u)
        if scale_mode == "max_abs":
            scale = m
        else:
            nnz = int(np.count_nonzero(codes))
            scale = l2_norm(v) / math.sqrt(nnz) if nnz else 0.0
    return CompressedMessage("ternary", d, {"codes": codes, "scale": scale}, spec)


def randomized_quantize(v, levels, rng):
    """Stochastic rounding onto ``levels`` evenly spaced points over [min v, max v]."""
    spec = CompressorSpec("random_quantize", levels=levels)
    v = as_vector(v)
    d = v.size
    lo = float(np.min(v))
    hi = float(np.max(v))
    if lo == hi:
        codes = np.zeros(d, dtype=np.int64)
    else:
        step = (hi - lo) / (levels - 1)
        u = _need_rng(rng, "random_quantize").uniform(d)
        codes = kernels.quantize_codes(v, lo, step, levels, u)
    payload = {"codes": codes, "lo": lo, "hi": hi, "levels": int(levels)}
    return CompressedMessage("random_quantize", d, payload, spec)


def random_sparsify(v, keep_prob, rng):
    """Keep each entry with probability ``keep_prob``, rescaled by 1/keep_prob."""
    spec = CompressorSpec("random_sparsify", keep_prob=keep_prob)
    v = as_vector(v)
    u = _need_rng(rng, "random_sparsify").uniform(v.size)
    idx = np.flatnonzero(u < keep_prob).astype(np.int64)
    payload = {"indices": idx, "values": v[idx] / keep_prob}
    return CompressedMessage("random_sparsify", v.size, payload, spec)


def clip_low_bits(v, mantissa_bits_zeroed=None, mode="binary", decimal_places=1):
    """Zero the lowest mantissa bits of every entry.

    ``mode="decimal"`` instead truncates toward zero at ``decimal_places``
    (1.23456 -> 1.2 for one place).
    """
    v = as_vector(v)
    if mode == "decimal":
        spec = CompressorSpec("clip", clip_mode="decimal", decimal_places=decimal_places)
        scale = 10.0**decimal_places
        values = np.trunc(v * scale) / scale
        payload = {"values": values, "mode": "decimal", "places": decimal_places}
    else:
        spec = CompressorSpec("clip", mantissa_bits_zeroed=mantissa_bits_zeroed)
        values = kernels.clip_low_bits(v, int(mantissa_bits_zeroed))
        payload = {"values": values, "mode": "binary", "m": int(mantissa_bits_zeroed)}
    return CompressedMessage("clip", v.size, payload, spec)


def compress(spec, v, rng=None):
    """Apply ``spec`` to ``v``. Randomized kinds draw only from ``rng``."""
    kind = spec.kind
    if kind == "identity":
        return identity(v)
    if kind == "one_bit":
        return one_bit_quantize(v)
    if kind == "top_k":
        return top_k_sparsify(v, spec.k)
    if kind == "ternary":
        return ternary_quantize(v, spec.scale_mode, rng)
    if kind == "random_quantize":
        return randomized_quantize(v, spec.levels, rng)
    if kind == "random_sparsify":
        return random_sparsify(v, spec.keep_prob, rng)
    if kind == "clip":
        return clip_low_bits(v, spec.mantissa_bits_zeroed, spec.clip_mode, spec.decimal_places)
    raise CompressionError(f"unknown compressor kind {kind!r}")


def _require(payload, *keys):
    missing = [k for k in keys if k not in payload]
    if missing:
        raise CompressionError(f"malformed message: missing payload field(s) {missing}")


def _scatter(msg):
    _require(msg.payload, "indices", "values")
    idx = np.asarray(msg.payload["indices"])
    values = np.asarray(msg.payload["values"], dtype=np.float64)
    if idx.shape != values.shape or idx.ndim != 1:
        raise CompressionError("malformed message: indices/values length mismatch")
    if idx.size and (idx.min() < 0 or idx.max() >= msg.dim):
        raise CompressionError("malformed message: index out of range")
    out = np.zeros(msg.dim, dtype=np.float64)
    out[idx] = values
    return out


def _dense(msg, key):
    arr = np.asarray(msg.payload[key])
    if arr.shape != (msg.dim,):
        raise CompressionError(f"malformed message: {key} has shape {arr.shape}, expected ({msg.dim},)")
    return arr


def reconstruct(msg):
    """Decode ``msg`` into a dense vector of length ``msg.dim``."""
    if not isinstance(msg, CompressedMessage) or msg.dim < 1:
        raise CompressionError("malformed message")
    kind = msg.kind
    p = msg.payload
    if kind == "identity":
        _require(p, "values")
        return np.array(_dense(msg, "values"), dtype=np.float64, copy=True)
    if kind == "one_bit":
        _require(p, "signs", "scale")
        signs = np.unpackbits(np.asarray(p["signs"], dtype=np.uint8), count=msg.dim)
        if signs.size != msg.dim:
            raise CompressionError("malformed message: sign bitmap too short")
        s = float(p["scale"])
        return np.where(signs == 1, s, -s)
    if kind in ("top_k", "random_sparsify"):
        return _scatter(msg)
    if kind == "ternary":
        _require(p, "codes", "scale")
        return float(p["scale"]) * _dense(msg, "codes").astype(np.float64)
    if kind == "random_quantize":
        _require(p, "codes", "lo", "hi", "levels")
        codes = _dense(msg, "codes")
        lo, hi, levels = float(p["lo"]), float(p["hi"]), int(p["levels"])
        if lo == hi:
            return np.full(msg.dim, lo)
        if codes.min() < 0 or codes.max() > levels - 1:
            raise CompressionError("malformed message: quantization code out of range")
        step = (hi - lo) / (levels - 1)
        return np.where(codes == levels - 1, hi, lo + codes * step)
    if kind == "clip":
        _require(p, "values")
        return np.array(_dense(msg, "values"), dtype=np.float64, copy=True)
    raise CompressionError(f"malformed message: unknown kind {kind!r}")


# --- canonical byte encoding ---------------------------------------------

_HEADER = struct.Struct("<BQQ")
_TAGS = {
    "identity": 0,
    "one_bit": 1,
    "top_k": 2,
    "ternary": 3,
    "random_quantize": 4,
    "random_sparsify": 5,
    "clip": 6,
    "clip_decimal": 7,
}
_KIND_OF_TAG = {v: k for k, v in _TAGS.items()}


def _to_bits(values, width):
    values = np.asarray(values, dtype=np.uint64)
    if width == 0 or values.size == 0:
        return np.empty(0, dtype=np.uint8)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((values[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()


def _from_bits(bits, count, width):
    if width == 0 or count == 0:
        return np.zeros(count, dtype=np.uint64)
    chunk = bits[: count * width].reshape(count, width).astype(np.uint64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return (chunk << shifts).sum(axis=1, dtype=np.uint64)


def _f32_bits(x):
    return np.asarray(x, dtype=np.float32).reshape(-1).view(np.uint32).astype(np.uint64)


def _f32_from(u):
    return u.astype(np.uint32).view(np.float32).astype(np.float64)


def _f64_bits(x):
    return np.ascontiguousarray(x, dtype=np.float64).view(np.uint64)


def to_bytes(msg):
    """Serialize to header + bit-packed payload of ceil(bit_cost/8) bytes."""
    d = msg.dim
    p = msg.payload
    kind = msg.kind
    parts = []
    aux = 0
    tag = kind
    if kind == "identity":
        parts.append(_to_bits(_f64_bits(p["values"]), 64))
    elif kind == "one_bit":
        parts.append(np.unpackbits(np.asarray(p["signs"], dtype=np.uint8), count=d))
        parts.append(_to_bits(_f32_bits(p["scale"]), 32))
    elif kind in ("top_k", "random_sparsify"):
        aux = len(p["indices"])
        parts.append(_to_bits(p["indices"], index_bits(d)))
        parts.append(_to_bits(_f32_bits(p["values"]), 32))
    elif kind == "ternary":
        codes = np.asarray(p["codes"], dtype=np.int64)
        parts.append(_to_bits(np.where(codes < 0, 2, codes), 2))
        parts.append(_to_bits(_f32_bits(p["scale"]), 32))
    elif kind == "random_quantize":
        aux = p["levels"]
        parts.append(_to_bits(p["codes"], index_bits(aux)))
        parts.append(_to_bits(_f32_bits([p["lo"], p["hi"]]), 32))
    elif kind == "clip" and p["mode"] == "binary":
        aux = p["m"]
        top = _f64_bits(p["values"]) >> np.uint64(aux)
        parts.append(_to_bits(top, 64 - aux))
    elif kind == "clip":
        tag = "clip_decimal"
        aux = p["places"]
        parts.append(_to_bits(_f64_bits(p["values"]), 64))
    else:
        raise CompressionError(f"cannot serialize kind {kind!r}")
    bits = np.concatenate(parts) if parts else np.empty(0, dtype=np.uint8)
    return _HEADER.pack(_TAGS[tag], d, aux) + np.packbits(bits).tobytes()


def from_bytes(blob):
    """Inverse of ``to_bytes`` (reals stored at 32 bits come back rounded)."""
    if len(blob) < _HEADER.size:
        raise CompressionError("malformed message: truncated header")
    tag, d, aux = _HEADER.unpack_from(blob)
    if tag not in _KIND_OF_TAG or d < 1:
        raise CompressionError("malformed message: bad header")
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size))
    kind = _KIND_OF_TAG[tag]

    def take(count, width):
        nonlocal bits
        if bits.size < count * width:
            raise CompressionError("malformed message: truncated payload")
        out = _from_bits(bits, count, width)
        bits = bits[count * width :]
        return out

    if kind == "identity":
        return identity(take(d, 64).view(np.float64))
    if kind == "one_bit":
        signs = take(d, 1).astype(np.uint8)
        scale = float(_f32_from(take(1, 32))[0])
        return CompressedMessage(kind, d, {"signs": np.packbits(signs), "scale": scale}, CompressorSpec(kind))
    if kind in ("top_k", "random_sparsify"):
        idx = take(aux, index_bits(d)).astype(np.int64)
        values = _f32_from(take(aux, 32))
        spec = CompressorSpec("top_k", k=max(aux, 1)) if kind == "top_k" else CompressorSpec(kind, keep_prob=1.0)
        return CompressedMessage(kind, d, {"indices": idx, "values": values}, spec)
    if kind == "ternary":
        raw = take(d, 2).astype(np.int8)
        codes = np.where(raw == 2, -1, raw).astype(np.int8)
        scale = float(_f32_from(take(1, 32))[0])
        return CompressedMessage(kind, d, {"codes": codes, "scale": scale}, CompressorSpec(kind))
    if kind == "random_quantize":
        codes = take(d, index_bits(aux)).astype(np.int64)
        lo, hi = _f32_from(take(2, 32))
        payload = {"codes": codes, "lo": float(lo), "hi": float(hi), "levels": int(aux)}
        return CompressedMessage(kind, d, payload, CompressorSpec(kind, levels=int(aux)))
    if kind == "clip":
        top = take(d, 64 - aux)
        values = (top << np.uint64(aux)).view(np.float64)
        payload = {"values": values, "mode": "binary", "m": int(aux)}
        return CompressedMessage(kind, d, payload, CompressorSpec(kind, mantissa_bits_zeroed=int(aux)))
    values = take(d, 64).view(np.float64)
    payload = {"values": values, "mode": "decimal", "places": int(aux)}
    spec = CompressorSpec("clip", clip_mode="decimal", decimal_places=int(aux))
    return CompressedMessage("clip", d, payload, spec)
