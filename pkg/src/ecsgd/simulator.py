"""Experiment driver, metrics and the bandwidth/time cost model."""

import csv
import io
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .algorithms import ClusterState, step
from .analysis import Trajectory, compute_omega, theorem_metric
from .compression import IDENTITY, nominal_bit_cost
from .config import CostModel, GammaSchedule, TrainConfig, resolve_gamma  # noqa: F401  (re-exported)
from .errors import ConfigError, DimensionMismatch
from .numerics import ordered_mean, sq_norm
from .problems import build_problem

CSV_COLUMNS = (
    "iter",
    "loss",
    "grad_norm_sq",
    "bits_up",
    "bits_down",
    "sim_time_s",
    "server_delta_norm",
    "max_worker_delta_norm",
)


@dataclass(frozen=True)
class MetricsRow:
    """One iteration: loss and gradient at x_t, then the cost and residuals of step t."""

    iter: int
    loss: float
    grad_norm_sq: float
    bits_up: int
    bits_down: int
    sim_time_s: float
    server_delta_norm: float
    max_worker_delta_norm: float


@dataclass
class ExperimentResult:
    config: TrainConfig
    metrics: list
    final_state: ClusterState
    trajectory: Trajectory | None = None


def iteration_time(report, cm, n=None):
    """Seconds for one iteration: compute plus every message over the server link."""
    return cm.per_worker_compute + (report.bits_up + report.bits_down) / cm.server_bandwidth


def iteration_bits(algorithm, worker_spec, dim, n, server_spec=None, wire_bits_per_real=32):
    """(bits_up, bits_down) per iteration without running anything.

    For random_sparsify this is the expected count.
    """
    dense = wire_bits_per_real * dim
    if algorithm == "vanilla":
        return n * dense, n * dense
    up = n * nominal_bit_cost(worker_spec, dim, wire_bits_per_real)
    if algorithm == "doublesqueeze":
        server_spec = worker_spec if server_spec is None else server_spec
        return up, n * nominal_bit_cost(server_spec, dim, wire_bits_per_real)
    return up, n * dense


def initial_point(cfg, problem):
    if cfg.x0 is None:
        return np.zeros(problem.dim)
    x0 = np.asarray(cfg.x0, dtype=np.float64)
    if x0.shape != (problem.dim,):
        raise ConfigError(f"expected {problem.dim} entries, got {x0.size}", "x0")
    return x0


def run_experiment(cfg, problem=None):
    """Run ``cfg.iterations`` steps of ``cfg.algorithm``; deterministic in ``cfg``.

    Pass ``problem`` to reuse an already-built problem instance (it must
    match ``cfg.problem``'s dimension and worker count).
    """
    if not isinstance(cfg, TrainConfig):
        raise ConfigError(f"expected a TrainConfig, got {type(cfg).__name__}")
    if problem is None:
        problem = build_problem(cfg.problem, cfg.n_workers, cfg.seed)
    elif problem.n_workers != cfg.n_workers:
        raise DimensionMismatch(cfg.n_workers, problem.n_workers, "problem shards/workers")
    x0 = initial_point(cfg, problem)
    state = ClusterState.initial(x0, cfg.n_workers)
    # resolve every step size up front so config errors surface before iterating
    gammas = [resolve_gamma(cfg, t) for t in range(cfg.iterations)]
    if any(not (math.isfinite(g) and g >= 0) for g in gammas):
        raise ConfigError("resolved step size must be finite and >= 0", "gamma")

    traj = None
    if cfg.record_analysis:
        traj = Trajectory(cfg.n_workers, xs=[state.x], omega_init=compute_omega(state.worker_residuals, state.server_residual))

    rows = []
    clock = 0.0
    cm = cfg.cost_model
    for t in range(cfg.iterations):
        x_t = state.x
        fg = problem.full_grad(x_t)
        loss_t = problem.loss(x_t)
        state, rep = step(state, problem, cfg, gammas[t])
        clock += iteration_time(rep, cm, cfg.n_workers)
        server_sq = sq_norm(state.server_residual.delta)
        worker_sq = max(sq_norm(r.delta) for r in state.worker_residuals)
        rows.append(
            MetricsRow(
                t,
                loss_t,
                sq_norm(fg),
                int(rep.bits_up),
                int(rep.bits_down),
                clock,
                math.sqrt(server_sq),
                math.sqrt(worker_sq),
            )
        )
        if traj is not None:
            traj.xs.append(state.x)
            traj.worker_grads.append(rep.per_worker_grads)
            traj.avg_grads.append(ordered_mean(list(rep.per_worker_grads)))
            traj.full_grads.append(fg)
            traj.applied_updates.append(rep.applied_update)
            traj.gammas.append(rep.gamma)
            traj.omegas.append(compute_omega(state.worker_residuals, state.server_residual))
            traj.server_delta_sq.append(server_sq)
            traj.worker_delta_sq.append(worker_sq)
    return ExperimentResult(cfg, rows, state, traj)


@dataclass(frozen=True)
class Summary:
    iterations: int
    final_loss: float
    theorem_metric: float
    total_bits: int
    total_sim_time_s: float
    max_server_delta_norm: float
    max_worker_delta_norm: float


def summarize(metrics):
    if not metrics:
        raise ValueError("cannot summarize an empty metrics list")
    return Summary(
        iterations=len(metrics),
        final_loss=metrics[-1].loss,
        theorem_metric=theorem_metric(metrics),
        total_bits=sum(r.bits_up + r.bits_down for r in metrics),
        total_sim_time_s=metrics[-1].sim_time_s,
        max_server_delta_norm=max(r.server_delta_norm for r in metrics),
        max_worker_delta_norm=max(r.max_worker_delta_norm for r in metrics),
    )


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def metrics_csv(rows):
    """Render rows as CSV text (header + one line per iteration)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in astuple(r)])
    return buf.getvalue()


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv(rows))


def read_metrics_csv(path):
    types = [int if f.type in (int, "int") else float for f in fields(MetricsRow)]
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected metrics header {header}")
        for line in reader:
            out.append(MetricsRow(*(ty(v) for ty, v in zip(types, line))))
    return out


__all__ = [
    "CSV_COLUMNS",
    "CostModel",
    "ExperimentResult",
    "GammaSchedule",
    "IDENTITY",
    "MetricsRow",
    "Summary",
    "TrainConfig",
    "initial_point",
    "iteration_bits",
    "iteration_time",
    "metrics_csv",
    "read_metrics_csv",
    "resolve_gamma",
    "run_experiment",
    "summarize",
    "write_metrics_csv",
]
