"""Dense vector helpers and counter-based random streams.

Vectors are plain 1-D ``float64`` numpy arrays. Every helper returns a new
array and never writes into its inputs.
"""

import math
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InvalidVector

SEED_MASK = (1 << 64) - 1
# worker slot reserved for the parameter server in stream ids
SERVER = 0xFFFFFFFF


def as_vector(values, name="vector"):
    """Validate and return ``values`` as a fresh 1-D float64 array."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise InvalidVector(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < 1:
        raise InvalidVector(f"{name} must have dimension >= 1")
    if not np.isfinite(arr).all():
        raise InvalidVector(f"{name} contains NaN or Inf")
    return arr


def check_dim(x, dim, what="vector"):
    if x.shape != (dim,):
        raise DimensionMismatch(dim, x.shape[0] if x.ndim == 1 else x.shape, what)


def _finite(out, what):
    if not np.isfinite(out).all():
        raise InvalidVector(f"{what} produced a non-finite entry")
    return out


def axpy(a, x, y):
    """Return ``a * x + y`` as a new vector."""
    if not math.isfinite(a):
        raise InvalidVector("axpy scale must be finite")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(x.shape[0], y.shape[0], "axpy")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x + y
    return _finite(out, "axpy")


def sq_norm(x):
    """Squared l2 norm with a correctly rounded (order-independent) sum."""
    x = np.asarray(x, dtype=np.float64)
    return math.fsum((x * x).tolist())


def l2_norm(x):
    """l2 norm, scaled by the largest magnitude so tiny or huge entries neither
    underflow nor overflow; order-independent like ``sq_norm``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    m = float(np.abs(x).max())
    if m == 0.0 or not math.isfinite(m):
        return m
    return m * math.sqrt(sq_norm(x / m))


def ordered_mean(vectors):
    """Mean of equal-length vectors, summed in ascending index order."""
    if not vectors:
        raise ValueError("ordered_mean of an empty sequence")
    acc = np.array(vectors[0], dtype=np.float64, copy=True)
    for v in vectors[1:]:
        if v.shape != acc.shape:
            raise DimensionMismatch(acc.shape[0], v.shape[0], "ordered_mean")
        acc = acc + v
    return acc / len(vectors)


def purpose_tag(purpose):
    if isinstance(purpose, int):
        return purpose & 0xFFFFFFFF
    return zlib.crc32(purpose.encode("utf-8")) & 0xFFFFFFFF


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream keyed by (seed, worker, iteration, purpose).

    Draws are computed by Philox4x32-10 from the key and the draw position,
    so the same stream always yields the same numbers and no state is
    shared between streams.
    """

    seed: int
    worker: int
    iteration: int
    purpose: str = "data"

    def __post_init__(self):
        if not 0 <= self.worker <= 0xFFFFFFFF:
            raise ValueError(f"worker index out of range: {self.worker}")
        if not 0 <= self.iteration <= 0xFFFFFFFF:
            raise ValueError(f"iteration out of range: {self.iteration}")

    @property
    def key(self):
        return self.seed & SEED_MASK

    def uniform(self, count, offset=0):
        return draw_uniform(self, count, offset)

    def normal(self, count, offset=0):
        return draw_normal(self, count, offset)

    def child(self, purpose):
        return RngStream(self.seed, self.worker, self.iteration, purpose)


def draw_uniform(stream, count, offset=0):
    """``count`` uniforms in [0, 1) starting at draw position ``offset``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    return kernels.philox_uniform(
        stream.key,
        stream.iteration,
        stream.worker,
        purpose_tag(stream.purpose),
        count,
        offset,
    )


def draw_normal(stream, count, offset=0):
    """Standard normals via Box-Muller; consumes two uniforms per value."""
    u = draw_uniform(stream, 2 * count, 2 * offset)
    radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    return radius * np.cos(2.0 * np.pi * u[1::2])
