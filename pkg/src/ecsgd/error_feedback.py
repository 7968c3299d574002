"""Residual (error-compensation) state shared by workers and the server."""

from dataclasses import dataclass

import numpy as np

from .compression import compress, reconstruct
from .errors import DimensionMismatch
from .numerics import as_vector, l2_norm

SERVER_OWNER = "server"


def worker_owner(i):
    return f"worker{i}"


@dataclass(frozen=True, eq=False)
class ResidualState:
    """Accumulated compression error held by one node, kept at full precision."""

    delta: np.ndarray
    owner: str = SERVER_OWNER

    @classmethod
    def zeros(cls, dim, owner=SERVER_OWNER):
        return cls(np.zeros(dim, dtype=np.float64), owner)

    @property
    def dim(self):
        return self.delta.shape[0]

    def norm(self):
        return l2_norm(self.delta)


def reset(state):
    return ResidualState.zeros(state.dim, state.owner)


def compensate_compress_update(input, state, spec, rng=None):
    """Add the residual, compress, and keep what the message lost.

    Returns ``(msg, new_state)`` with ``v = input + delta``,
    ``msg = compress(spec, v)`` and ``new_delta = v - reconstruct(msg)``.
    """
    msg, _, new_state = compensate(input, state, spec, rng)
    return msg, new_state


def compensate(input, state, spec, rng=None):
    """Like ``compensate_compress_update`` but also returns the decoded message."""
    g = as_vector(input, "input")
    if g.shape != state.delta.shape:
        raise DimensionMismatch(state.dim, g.shape[0], "compensate_compress_update")
    v = g + state.delta
    msg = compress(spec, v, rng)
    decoded = reconstruct(msg)
    return msg, decoded, ResidualState(v - decoded, state.owner)
