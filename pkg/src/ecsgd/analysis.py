"""Executable checks of the update-rule identities and bounds.

Indexing: step ``t`` (0-based) starts from ``x_t``, leaves residuals whose
combination is ``omega_t``, and produces ``x_{t+1}``. ``omega_{-1}`` is
the combination of the initial residuals (zero for a fresh cluster).
Then, exactly in real arithmetic,

    x_{t+1} - x_t = -gamma * (g_t + omega_{t-1} - omega_t)

where ``g_t`` is the mean of the workers' stochastic gradients.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .error_feedback import ResidualState
from .errors import DimensionMismatch, IncompleteTrajectory
from .numerics import l2_norm, ordered_mean, sq_norm

RHO_GRID = (0.1, 0.5, 1.0, 2.0, 10.0)


def _delta(r):
    return r.delta if isinstance(r, ResidualState) else np.asarray(r, dtype=np.float64)


def compute_omega(worker_residuals, server_residual):
    """Server residual plus the mean worker residual."""
    workers = [_delta(r) for r in worker_residuals]
    server = _delta(server_residual)
    for w in workers:
        if w.shape != server.shape:
            raise DimensionMismatch(server.shape[0], w.shape[0], "compute_omega")
    return server + ordered_mean(workers)


def closed_form_update(grads, omega_prev, omega_now, gamma):
    """Realized update ``-gamma * (mean(grads) + omega_prev - omega_now)``."""
    g = ordered_mean([np.asarray(v, dtype=np.float64) for v in grads])
    omega_prev = np.asarray(omega_prev, dtype=np.float64)
    omega_now = np.asarray(omega_now, dtype=np.float64)
    if not (g.shape == omega_prev.shape == omega_now.shape):
        raise DimensionMismatch(g.shape[0], omega_prev.shape[0], "closed_form_update")
    return -gamma * (g + omega_prev - omega_now)


@dataclass
class Trajectory:
    """Per-step record of a run, sufficient for every checker here."""

    n: int
    xs: list = field(default_factory=list)
    worker_grads: list = field(default_factory=list)
    avg_grads: list = field(default_factory=list)
    full_grads: list = field(default_factory=list)
    applied_updates: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    omega_init: np.ndarray | None = None
    omegas: list = field(default_factory=list)
    server_delta_sq: list = field(default_factory=list)
    worker_delta_sq: list = field(default_factory=list)

    @property
    def T(self):
        return len(self.applied_updates)

    def omega_before(self, t):
        return self.omega_init if t == 0 else self.omegas[t - 1]

    def validate(self):
        T = self.T
        if len(self.xs) != T + 1 or self.omega_init is None:
            raise IncompleteTrajectory("trajectory needs x_0..x_T and the initial residuals")
        for name in ("worker_grads", "avg_grads", "gammas", "omegas"):
            if len(getattr(self, name)) != T:
                raise IncompleteTrajectory(f"trajectory field {name} has {len(getattr(self, name))} entries, expected {T}")


@dataclass(frozen=True)
class AnalysisSnapshot:
    omega: np.ndarray
    xi: np.ndarray
    y: np.ndarray
    grad_norm_sq: float


def snapshot(traj, t):
    """Omega_t, xi_t, y_t and ||grad f(x_t)||^2 at step ``t``."""
    traj.validate()
    if not traj.full_grads:
        raise IncompleteTrajectory("snapshot needs full gradients")
    y = traj.xs[t] - traj.gammas[t] * traj.omega_before(t)
    xi = traj.full_grads[t] - traj.avg_grads[t]
    return AnalysisSnapshot(traj.omegas[t], xi, y, sq_norm(traj.full_grads[t]))


def step_oracle_deviations(traj):
    """Per-step ||applied update - closed-form update||."""
    traj.validate()
    out = []
    for t in range(traj.T):
        cf = closed_form_update(traj.worker_grads[t], traj.omega_before(t), traj.omegas[t], traj.gammas[t])
        out.append(l2_norm(traj.applied_updates[t] - cf))
    return out


def _constant_gamma(traj):
    gammas = set(traj.gammas)
    if len(gammas) > 1:
        raise ValueError("this identity needs a constant step size")
    return gammas.pop() if gammas else 0.0


def telescoping_check(traj):
    """Relative residual of the summed update identity.

    ``||(x_0 - x_T) - gamma (sum_t g_t + omega_{-1} - omega_{T-1})|| /
    (1 + ||gamma sum_t g_t||)``; exact arithmetic gives 0.
    """
    traj.validate()
    T = traj.T
    if T == 0:
        return 0.0
    gamma = _constant_gamma(traj)
    total = np.zeros_like(traj.xs[0])
    for g in traj.avg_grads:
        total = total + g
    predicted = gamma * (total + traj.omega_init - traj.omegas[T - 1])
    resid = (traj.xs[0] - traj.xs[T]) - predicted
    return l2_norm(resid) / (1.0 + l2_norm(gamma * total))


def aux_sequence(traj):
    """y_t = x_t - gamma * omega_{t-1} for t = 0..T."""
    traj.validate()
    gamma = _constant_gamma(traj)
    ys = [traj.xs[0] - gamma * traj.omega_init]
    for t in range(traj.T):
        ys.append(traj.xs[t + 1] - gamma * traj.omegas[t])
    return ys


def aux_sequence_deviation(traj):
    """max_t ||(y_{t+1} - y_t) + gamma * g_t||; y moves by exact SGD steps."""
    ys = aux_sequence(traj)
    gamma = _constant_gamma(traj)
    dev = 0.0
    for t in range(traj.T):
        dev = max(dev, l2_norm((ys[t + 1] - ys[t]) + gamma * traj.avg_grads[t]))
    return dev


def lr_corollary(L, sigma, epsilon, T, n):
    """gamma = 1 / (4L + sigma sqrt(T/n) + epsilon^(2/3) T^(1/3))."""
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if not T >= 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if sigma < 0 or epsilon < 0:
        raise ValueError("sigma and epsilon must be nonnegative")
    return 1.0 / (4.0 * L + sigma * math.sqrt(T / n) + epsilon ** (2.0 / 3.0) * T ** (1.0 / 3.0))


def theorem_metric(trajectory):
    """(1/T) sum_t ||grad f(x_t)||^2.

    Accepts a ``Trajectory``, a sequence of metrics rows, or a plain
    sequence of squared gradient norms.
    """
    if isinstance(trajectory, Trajectory):
        values = [sq_norm(g) for g in trajectory.full_grads]
    else:
        values = [getattr(r, "grad_norm_sq", r) for r in trajectory]
    if not values:
        raise IncompleteTrajectory("theorem_metric of an empty trajectory")
    return math.fsum(values) / len(values)


def theorem_rhs(f_gap, L, sigma, epsilon, gamma, T, n, residual_constant=4.0):
    """Right side of the convergence bound (residual term constant 4 by default)."""
    return f_gap + L * gamma**2 * sigma**2 * T / (2 * n) + residual_constant * L**2 * epsilon**2 * gamma**3 * T


def theorem_lhs(grad_norm_sq, L, gamma):
    return (gamma / 2 - L * gamma**2 / 2) * math.fsum(grad_norm_sq)


def contraction_alpha_sq(spec, dim):
    """alpha^2 with ||C(x) - x||^2 <= alpha^2 ||x||^2, when known in closed form."""
    if spec.kind == "identity":
        return 0.0
    if spec.kind == "top_k":
        return 1.0 - min(spec.k, dim) / dim
    if spec.kind == "random_sparsify":
        return 1.0 / spec.keep_prob - 1.0
    return None


def estimate_epsilon(traj):
    """Smallest eps with ||delta||^2 <= eps^2 over every recorded residual."""
    peak = max(max(traj.server_delta_sq, default=0.0), max(traj.worker_delta_sq, default=0.0))
    return math.sqrt(peak)


@dataclass(frozen=True)
class BoundParams:
    alpha_sq: float
    sigma: float = 0.0
    L: float | None = None
    epsilon: float | None = None
    G: float | None = None
    rho: float | None = None

    def __post_init__(self):
        for name in ("alpha_sq", "sigma", "L", "epsilon", "G", "rho"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class ResidualBoundReport:
    rho: float | None
    G_sq: float
    bound: float
    max_server_delta_sq: float
    worker_G_sq: float
    worker_bound: float
    max_worker_delta_sq: float
    vacuous: bool

    @property
    def ok(self):
        return (
            not self.vacuous
            and self.max_server_delta_sq <= self.bound
            and self.max_worker_delta_sq <= self.worker_bound
        )

    def describe(self):
        if self.vacuous:
            return "residual bound vacuous: (1 + rho) alpha^2 >= 1 for every rho tried"
        return (
            f"server max|delta|^2={self.max_server_delta_sq:.6g} <= {self.bound:.6g}; "
            f"worker max|delta|^2={self.max_worker_delta_sq:.6g} <= {self.worker_bound:.6g} "
            f"(rho={self.rho}) -> {'ok' if self.ok else 'VIOLATED'}"
        )


def residual_bound_check(traj, params):
    """Compare recorded residuals with the geometric-series bound.

    Server: (G^2 + sigma^2/n) / (1 - (1+rho) alpha^2) with G^2 the largest
    squared norm of the averaged stochastic gradient seen. Workers use
    their own largest squared gradient norm and sigma^2. ``rho`` is
    minimized over ``RHO_GRID`` unless fixed in ``params``.
    """
    if traj.T == 0:
        raise IncompleteTrajectory("residual_bound_check needs at least one step")
    n = traj.n
    G_sq = params.G**2 if params.G is not None else max(sq_norm(g) for g in traj.avg_grads)
    wG_sq = max(sq_norm(g) for gs in traj.worker_grads for g in gs) if traj.worker_grads else G_sq
    grid = (params.rho,) if params.rho is not None else RHO_GRID
    best = None
    for rho in grid:
        denom = 1.0 - (1.0 + rho) * params.alpha_sq
        if denom <= 0:
            continue
        if best is None or denom > best[1]:
            best = (rho, denom)
    max_s = max(traj.server_delta_sq)
    max_w = max(traj.worker_delta_sq)
    if best is None:
        return ResidualBoundReport(None, G_sq, math.inf, max_s, wG_sq, math.inf, max_w, vacuous=True)
    rho, denom = best
    bound = (G_sq + params.sigma**2 / n) / denom
    worker_bound = (wG_sq + params.sigma**2) / denom
    return ResidualBoundReport(rho, G_sq, bound, max_s, wG_sq, worker_bound, max_w, vacuous=False)


def residual_trend(values):
    """Least-squares slope of ``values`` against their index, with its standard error.

    Used to check that residual norms are not drifting upward; the standard
    error assumes independent noise, so it understates the uncertainty of
    autocorrelated series (the check is stricter than it looks).
    """
    y = np.asarray(values, dtype=np.float64)
    if y.size < 3:
        raise ValueError("need at least 3 points for a trend")
    t = np.arange(y.size, dtype=np.float64)
    (slope, _), cov = np.polyfit(t, y, 1, cov=True)
    return float(slope), float(math.sqrt(max(cov[0, 0], 0.0)))


def xi_second_moment(problem, x, draws, seed=0):
    """Monte-Carlo E||xi||^2 at fixed ``x``.

    xi = mean_i (grad f(x) - grad F(x; zeta_i)) over the problem's workers;
    draw ``s`` uses iteration slot ``s`` of each worker's data stream.
    """
    x = np.asarray(x, dtype=np.float64)
    full = problem.full_grad(x)
    n = problem.n_workers
    acc = []
    for s in range(draws):
        grads = [problem.stochastic_grad(x, problem.sample(i, s, seed)) for i in range(n)]
        acc.append(sq_norm(full - ordered_mean(grads)))
    return math.fsum(acc) / draws
