"""One synchronous iteration of each training scheme.

Workers and the server are simulated in a fixed order inside one process.
Worker ``i`` at iteration ``t`` draws data from
``RngStream(seed, i, t, "data")`` and compression randomness from
``RngStream(seed, i, t, "compress")``; the server uses worker slot
``SERVER``. Data draws therefore coincide across algorithms sharing a seed.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .compression import bit_cost, compress, reconstruct
from .config import resolve_gamma
from .error_feedback import ResidualState, compensate, worker_owner
from .errors import DimensionMismatch
from .numerics import SERVER, RngStream, as_vector, ordered_mean


@dataclass(frozen=True, eq=False)
class ClusterState:
    """Global model plus every node's residual.

    There is one authoritative ``x``: all workers apply the same broadcast
    update, so they hold identical copies by construction.
    """

    x: np.ndarray
    worker_residuals: tuple
    server_residual: ResidualState
    t: int = 0

    @classmethod
    def initial(cls, x0, n):
        x0 = as_vector(x0, "x0")
        d = x0.size
        workers = tuple(ResidualState.zeros(d, worker_owner(i)) for i in range(n))
        return cls(x0, workers, ResidualState.zeros(d))

    @property
    def n(self):
        return len(self.worker_residuals)

    @property
    def dim(self):
        return self.x.shape[0]

    def worker_models(self):
        """The model each worker holds; all views of the single copy."""
        return [self.x] * self.n


@dataclass(frozen=True, eq=False)
class StepReport:
    """What one step did.

    ``applied_update`` is x_{t+1} - x_t; ``downlink`` is the decoded vector
    broadcast by the server (the update is ``-gamma * downlink``).
    """

    applied_update: np.ndarray
    per_worker_grads: tuple
    bits_up: int
    bits_down: int
    gamma: float
    downlink: np.ndarray


@lru_cache(maxsize=4)
def _pool(size):
    return ThreadPoolExecutor(max_workers=size, thread_name_prefix="ecsgd-worker")


def worker_gradients(state, problem, cfg):
    """Per-worker stochastic gradients at ``state.x``, in worker order."""
    if problem.dim != state.dim:
        raise DimensionMismatch(state.dim, problem.dim, "problem/model")
    if problem.n_workers != state.n:
        raise DimensionMismatch(state.n, problem.n_workers, "problem shards/workers")
    x, t, seed = state.x, state.t, cfg.seed

    def one(i):
        return problem.stochastic_grad(x, problem.sample(i, t, seed))

    if cfg.parallel_workers > 1 and state.n > 1:
        # map preserves order; each worker's draw depends only on (seed, i, t)
        return tuple(_pool(cfg.parallel_workers).map(one, range(state.n)))
    return tuple(one(i) for i in range(state.n))


def _stream(cfg, worker, t):
    return RngStream(cfg.seed, worker, t, "compress")


def _dense_bits(cfg, d):
    return cfg.cost_model.wire_bits_per_real * d


def _finish(state, gamma, grads, workers, server, downlink, bits_up, bits_down):
    applied = -gamma * downlink
    new_state = ClusterState(state.x + applied, workers, server, state.t + 1)
    report = StepReport(applied, grads, bits_up, bits_down, gamma, downlink)
    return new_state, report


def _uplink_compensated(state, cfg, grads):
    wire = cfg.cost_model.wire_bits_per_real
    decoded, residuals, bits = [], [], 0
    for i, g in enumerate(grads):
        msg, dec, res = compensate(g, state.worker_residuals[i], cfg.worker_compressor, _stream(cfg, i, state.t))
        decoded.append(dec)
        residuals.append(res)
        bits += bit_cost(msg, wire)
    return decoded, tuple(residuals), bits


def _uplink_plain(state, cfg, grads):
    wire = cfg.cost_model.wire_bits_per_real
    decoded, bits = [], 0
    for i, g in enumerate(grads):
        msg = compress(cfg.worker_compressor, g, _stream(cfg, i, state.t))
        decoded.append(reconstruct(msg))
        bits += bit_cost(msg, wire)
    return decoded, bits


def doublesqueeze_step(state, problem, cfg, gamma=None):
    """Error-compensated compression on the uplink and on the downlink."""
    gamma = resolve_gamma(cfg, state.t) if gamma is None else gamma
    grads = worker_gradients(state, problem, cfg)
    decoded, workers, bits_up = _uplink_compensated(state, cfg, grads)
    msg, down, server = compensate(
        ordered_mean(decoded), state.server_residual, cfg.downlink_compressor, _stream(cfg, SERVER, state.t)
    )
    bits_down = state.n * bit_cost(msg, cfg.cost_model.wire_bits_per_real)
    return _finish(state, gamma, grads, workers, server, down, bits_up, bits_down)


def memsgd_step(state, problem, cfg, gamma=None):
    """Compensated worker compression; the server broadcasts the dense average."""
    gamma = resolve_gamma(cfg, state.t) if gamma is None else gamma
    grads = worker_gradients(state, problem, cfg)
    decoded, workers, bits_up = _uplink_compensated(state, cfg, grads)
    down = ordered_mean(decoded)
    bits_down = state.n * _dense_bits(cfg, state.dim)
    return _finish(state, gamma, grads, workers, state.server_residual, down, bits_up, bits_down)


def _uncompensated_step(state, problem, cfg, gamma):
    gamma = resolve_gamma(cfg, state.t) if gamma is None else gamma
    grads = worker_gradients(state, problem, cfg)
    decoded, bits_up = _uplink_plain(state, cfg, grads)
    down = ordered_mean(decoded)
    bits_down = state.n * _dense_bits(cfg, state.dim)
    return _finish(state, gamma, grads, state.worker_residuals, state.server_residual, down, bits_up, bits_down)


def qsgd_step(state, problem, cfg, gamma=None):
    """Ternary worker quantization without compensation; dense downlink."""
    return _uncompensated_step(state, problem, cfg, gamma)


def topk_sgd_step(state, problem, cfg, gamma=None):
    """Top-k worker sparsification without compensation; dense downlink."""
    return _uncompensated_step(state, problem, cfg, gamma)


def vanilla_step(state, problem, cfg, gamma=None):
    """Plain parallel SGD: dense in both directions."""
    gamma = resolve_gamma(cfg, state.t) if gamma is None else gamma
    grads = worker_gradients(state, problem, cfg)
    down = ordered_mean(list(grads))
    dense = state.n * _dense_bits(cfg, state.dim)
    return _finish(state, gamma, grads, state.worker_residuals, state.server_residual, down, dense, dense)


STEPPERS = {
    "doublesqueeze": doublesqueeze_step,
    "memsgd": memsgd_step,
    "qsgd": qsgd_step,
    "topk_sgd": topk_sgd_step,
    "vanilla": vanilla_step,
}


def step(state, problem, cfg, gamma=None):
    return STEPPERS[cfg.algorithm](state, problem, cfg, gamma)
