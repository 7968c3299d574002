"""Training configuration, cost model and step-size schedules."""

import math
from dataclasses import dataclass, field, fields, replace

from .compression import IDENTITY, CompressorSpec
from .errors import CompressionError, ConfigError
from .problems import ProblemSpec

ALGORITHMS = ("doublesqueeze", "memsgd", "qsgd", "topk_sgd", "vanilla")
GAMMA_MODES = ("constant", "corollary", "step")


@dataclass(frozen=True)
class CostModel:
    """Parameter-server link model.

    All uplink and downlink messages share one server link of
    ``server_bandwidth`` bits/second.
    """

    server_bandwidth: float = 1e9
    per_worker_compute: float = 0.0
    wire_bits_per_real: int = 32

    def __post_init__(self):
        if not self.server_bandwidth > 0:
            raise ConfigError("must be > 0", "cost_model.server_bandwidth")
        if self.per_worker_compute < 0:
            raise ConfigError("must be >= 0", "cost_model.per_worker_compute")
        if self.wire_bits_per_real not in (32, 64):
            raise ConfigError("must be 32 or 64", "cost_model.wire_bits_per_real")


@dataclass(frozen=True)
class GammaSchedule:
    """Step size: a constant, the corollary formula, or step decay.

    Step decay divides ``value`` by ``factor`` every ``every_epochs`` epochs
    of ``iters_per_epoch`` iterations.
    """

    mode: str = "constant"
    value: float = 0.1
    L: float | None = None
    sigma: float | None = None
    epsilon: float | None = None
    factor: float = 10.0
    every_epochs: int = 160
    iters_per_epoch: int = 1

    def __post_init__(self):
        if self.mode not in GAMMA_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {GAMMA_MODES}", "gamma.mode")
        if self.mode == "corollary":
            for name in ("L", "sigma", "epsilon"):
                if getattr(self, name) is None:
                    raise ConfigError("required in corollary mode", f"gamma.{name}")
            if not self.L > 0:
                raise ConfigError("must be > 0", "gamma.L")
            if self.sigma < 0 or self.epsilon < 0:
                raise ConfigError("sigma and epsilon must be >= 0", "gamma")
        else:
            if not (math.isfinite(self.value) and self.value >= 0):
                raise ConfigError("must be a finite number >= 0", "gamma.value")
        if self.mode == "step":
            if not self.factor > 0:
                raise ConfigError("must be > 0", "gamma.factor")
            if self.every_epochs < 1 or self.iters_per_epoch < 1:
                raise ConfigError("every_epochs and iters_per_epoch must be >= 1", "gamma")

    @classmethod
    def from_value(cls, value):
        if isinstance(value, GammaSchedule):
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return cls("constant", float(value))
        if isinstance(value, dict):
            unknown = set(value) - {f.name for f in fields(cls)}
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)}", "gamma")
            return cls(**value)
        raise ConfigError(f"expected a number or a mapping, got {value!r}", "gamma")


@dataclass(frozen=True)
class TrainConfig:
    name: str = "run"
    algorithm: str = "vanilla"
    worker_compressor: CompressorSpec = IDENTITY
    server_compressor: CompressorSpec | None = None
    n_workers: int = 1
    iterations: int = 1
    gamma: GammaSchedule = field(default_factory=GammaSchedule)
    seed: int = 0
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    cost_model: CostModel = field(default_factory=CostModel)
    record_analysis: bool = False
    x0: tuple | None = None
    parallel_workers: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}", "algorithm")
        if not isinstance(self.n_workers, int) or self.n_workers < 1:
            raise ConfigError("must be an integer >= 1", "workers")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise ConfigError("must be an integer >= 1", "iterations")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("must be an integer in [0, 2**64)", "seed")
        if self.parallel_workers < 0:
            raise ConfigError("must be >= 0", "parallel_workers")
        if self.algorithm == "qsgd" and self.worker_compressor.kind != "ternary":
            raise ConfigError("qsgd requires a ternary worker compressor", "worker_compressor.kind")
        if self.algorithm == "topk_sgd" and self.worker_compressor.kind != "top_k":
            raise ConfigError("topk_sgd requires a top_k worker compressor", "worker_compressor.kind")

    @property
    def downlink_compressor(self):
        """Compressor the server applies (doublesqueeze only)."""
        if self.server_compressor is not None:
            return self.server_compressor
        return self.worker_compressor

    def with_(self, **changes):
        return replace(self, **changes)


def compressor_from(value, path):
    try:
        return CompressorSpec.from_dict(value)
    except (CompressionError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None


def resolve_gamma(cfg, t=0):
    """Step size for iteration ``t`` (0-based) under ``cfg.gamma``."""
    from .analysis import lr_corollary

    g = cfg.gamma
    if g.mode == "constant":
        return g.value
    if g.mode == "corollary":
        return lr_corollary(g.L, g.sigma, g.epsilon, cfg.iterations, cfg.n_workers)
    epoch = t // g.iters_per_epoch
    return g.value / g.factor ** (epoch // g.every_epochs)
