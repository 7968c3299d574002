"""Objectives with stochastic gradient oracles split across worker shards.

The global objective is the mean of the per-worker objectives. Sampling is
driven entirely by ``RngStream(seed, worker, iteration, "data")`` so a draw
is reproducible from its coordinates alone.
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DimensionMismatch
from .numerics import RngStream, as_vector, ordered_mean

PROBLEM_KINDS = ("quadratic", "logistic", "mlp")


@dataclass(frozen=True)
class ProblemSpec:
    """Declarative description of a problem, as read from a config file.

    ``dim`` is the model dimension for quadratic/logistic and the number of
    input features for mlp.
    """

    kind: str = "quadratic"
    dim: int = 10
    noise_sigma: float = 0.0
    heterogeneity: float = 0.0
    curvature: tuple | None = None
    optimum: tuple | None = None
    condition: float = 10.0
    samples_per_worker: int = 64
    batch_size: int = 8
    hidden: int = 16
    l2: float = 1e-3
    shift_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}; expected one of {PROBLEM_KINDS}", "problem.kind")
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ConfigError("must be an integer >= 1", "problem.dim")
        if self.noise_sigma < 0:
            raise ConfigError("must be >= 0", "problem.noise_sigma")
        if not 0.0 <= self.heterogeneity <= 1.0:
            raise ConfigError("must lie in [0, 1]", "problem.heterogeneity")
        if self.condition < 1.0:
            raise ConfigError("must be >= 1", "problem.condition")
        for name in ("samples_per_worker", "batch_size", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"problem.{name}")
        if self.curvature is not None and len(self.curvature) != self.dim:
            raise ConfigError(f"expected {self.dim} entries", "problem.curvature")
        if self.optimum is not None and len(self.optimum) != self.dim:
            raise ConfigError(f"expected {self.dim} entries", "problem.optimum")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)}", "problem")
        d = dict(d)
        for key in ("curvature", "optimum"):
            if d.get(key) is not None:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Shard:
    """One worker's local distribution.

    Quadratic shards are a gradient shift; data shards hold features and
    targets.
    """

    worker: int
    shift: np.ndarray | None = None
    features: np.ndarray | None = None
    targets: np.ndarray | None = None


@dataclass(frozen=True)
class SampleDraw:
    worker: int
    iteration: int
    indices: np.ndarray | None
    noise: np.ndarray | None


class Problem:
    kind = "base"

    def __init__(self, dim, shards, noise_sigma=0.0, batch_size=1):
        self.dim = int(dim)
        self.shards = list(shards)
        self.noise_sigma = float(noise_sigma)
        self.batch_size = int(batch_size)

    @property
    def n_workers(self):
        return len(self.shards)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionMismatch(self.dim, x.shape[0] if x.ndim == 1 else x.shape, f"{self.kind} problem")
        return x

    def _shard_size(self, i):
        return 0

    def sample(self, worker, iteration, seed):
        stream = RngStream(seed, worker, iteration, "data")
        m = self._shard_size(worker)
        indices = None
        if m:
            u = stream.uniform(self.batch_size)
            indices = np.minimum((u * m).astype(np.int64), m - 1)
        noise = None
        if self.noise_sigma > 0:
            # E||noise||^2 = noise_sigma^2
            noise = stream.normal(self.dim, offset=self.batch_size) * (self.noise_sigma / np.sqrt(self.dim))
        return SampleDraw(worker, iteration, indices, noise)

    def stochastic_grad(self, x, draw):
        x = self._check(x)
        g = self._sample_grad(x, draw.worker, draw.indices)
        if draw.noise is not None:
            g = g + draw.noise
        return g

    def _sample_grad(self, x, i, indices):
        return self.worker_grad(x, i)

    def worker_grad(self, x, i):
        raise NotImplementedError

    def worker_loss(self, x, i):
        raise NotImplementedError

    def full_grad(self, x):
        x = self._check(x)
        return ordered_mean([self.worker_grad(x, i) for i in range(self.n_workers)])

    def loss(self, x):
        x = self._check(x)
        return float(np.mean([self.worker_loss(x, i) for i in range(self.n_workers)]))

    def smoothness(self):
        """Gradient Lipschitz constant when known in closed form, else None."""
        return None


class QuadraticProblem(Problem):
    """f(x) = f* + 1/2 sum_j a_j (x_j - x*_j)^2; shard i adds a linear term."""

    kind = "quadratic"

    def __init__(self, curvature, optimum, shards=None, noise_sigma=0.0, f_star=0.0):
        curvature = as_vector(curvature, "curvature")
        optimum = as_vector(optimum, "optimum")
        if curvature.shape != optimum.shape:
            raise DimensionMismatch(curvature.size, optimum.size, "quadratic optimum")
        if (curvature < 0).any():
            raise ValueError("curvature must be nonnegative")
        self.curvature = curvature
        self.optimum = optimum
        self.f_star = float(f_star)
        if shards is None:
            shards = [Shard(0, shift=np.zeros(curvature.size))]
        super().__init__(curvature.size, shards, noise_sigma, batch_size=0)

    def worker_grad(self, x, i):
        x = self._check(x)
        return self.curvature * (x - self.optimum) + self.shards[i].shift

    def worker_loss(self, x, i):
        x = self._check(x)
        r = x - self.optimum
        return self.f_star + 0.5 * float(np.dot(self.curvature * r, r)) + float(np.dot(self.shards[i].shift, r))

    def full_grad(self, x):
        x = self._check(x)
        return self.curvature * (x - self.optimum)

    def loss(self, x):
        x = self._check(x)
        r = x - self.optimum
        return self.f_star + 0.5 * float(np.dot(self.curvature * r, r))

    def smoothness(self):
        return float(np.max(self.curvature))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticProblem(Problem):
    """Mean logistic loss on +-1 labels plus (l2/2)||w||^2."""

    kind = "logistic"

    def __init__(self, shards, noise_sigma=0.0, batch_size=8, l2=0.0):
        dim = shards[0].features.shape[1]
        super().__init__(dim, shards, noise_sigma, batch_size)
        self.l2 = float(l2)

    @classmethod
    def from_arrays(cls, features, targets, **kw):
        """One shard per (features, targets) pair."""
        shards = [
            Shard(i, features=np.asarray(X, dtype=np.float64), targets=np.asarray(y, dtype=np.float64))
            for i, (X, y) in enumerate(zip(features, targets))
        ]
        return cls(shards, **kw)

    def _shard_size(self, i):
        return self.shards[i].targets.size

    def _grad_on(self, w, X, y):
        margins = y * (X @ w)
        coef = -y * _sigmoid(-margins)
        return X.T @ coef / y.size + self.l2 * w

    def worker_grad(self, x, i):
        x = self._check(x)
        s = self.shards[i]
        return self._grad_on(x, s.features, s.targets)

    def _sample_grad(self, x, i, indices):
        s = self.shards[i]
        return self._grad_on(x, s.features[indices], s.targets[indices])

    def worker_loss(self, x, i):
        x = self._check(x)
        s = self.shards[i]
        margins = s.targets * (s.features @ x)
        return float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * self.l2 * float(np.dot(x, x))


class MLPProblem(Problem):
    """One tanh hidden layer, scalar output, squared loss.

    Parameters are packed as ``[W1 (hidden x inputs), b1, w2, b2]``.
    """

    kind = "mlp"

    def __init__(self, shards, hidden=16, noise_sigma=0.0, batch_size=8):
        self.inputs = shards[0].features.shape[1]
        self.hidden = int(hidden)
        dim = self.hidden * self.inputs + 2 * self.hidden + 1
        super().__init__(dim, shards, noise_sigma, batch_size)

    def unpack(self, theta):
        h, p = self.hidden, self.inputs
        W1 = theta[: h * p].reshape(h, p)
        b1 = theta[h * p : h * p + h]
        w2 = theta[h * p + h : h * p + 2 * h]
        b2 = theta[-1]
        return W1, b1, w2, b2

    def predict(self, theta, X):
        W1, b1, w2, b2 = self.unpack(theta)
        return np.tanh(X @ W1.T + b1) @ w2 + b2

    def _shard_size(self, i):
        return self.shards[i].targets.size

    def _grad_on(self, theta, X, y):
        W1, b1, w2, b2 = self.unpack(theta)
        a = np.tanh(X @ W1.T + b1)
        r = (a @ w2 + b2 - y) / y.size
        dz = np.outer(r, w2) * (1.0 - a * a)
        return np.concatenate([(dz.T @ X).ravel(), dz.sum(axis=0), a.T @ r, [r.sum()]])

    def worker_grad(self, x, i):
        x = self._check(x)
        s = self.shards[i]
        return self._grad_on(x, s.features, s.targets)

    def _sample_grad(self, x, i, indices):
        s = self.shards[i]
        return self._grad_on(x, s.features[indices], s.targets[indices])

    def worker_loss(self, x, i):
        x = self._check(x)
        s = self.shards[i]
        r = self.predict(x, s.features) - s.targets
        return 0.5 * float(np.mean(r * r))


# --- construction --------------------------------------------------------


def _quadratic_shift(spec, i, n, heterogeneity, seed):
    # +-z pairs make the shifts cancel; an odd worker out gets no shift
    pair = i // 2
    if n == 1 or heterogeneity == 0.0 or (n % 2 == 1 and i == n - 1):
        return np.zeros(spec.dim)
    z = RngStream(seed, pair, 0, "shard-shift").normal(spec.dim)
    z = z * (heterogeneity * spec.shift_scale / np.sqrt(spec.dim))
    return z if i % 2 == 0 else -z


def _class_mean(spec, seed, width):
    mu = RngStream(seed, 0, 0, "class-mean").normal(width)
    return mu / np.linalg.norm(mu)


def _data_shard(spec, i, heterogeneity, seed, width):
    m = spec.samples_per_worker
    s = RngStream(seed, i, 0, "shard-data")
    u = s.uniform(m)
    X = s.normal(m * width, offset=m).reshape(m, width)
    if heterogeneity > 0:
        direction = RngStream(seed, i, 0, "shard-shift").normal(width)
        direction /= np.linalg.norm(direction)
        X = X + heterogeneity * spec.shift_scale * direction
    return u, X


def make_shards(spec, n, heterogeneity=None, seed=0):
    """Build ``n`` worker shards for ``spec``.

    Heterogeneity 0 gives every worker the same distribution; 1 gives each
    worker a mean shift of ``spec.shift_scale``.
    """
    if n < 1:
        raise ValueError(f"need at least one worker, got {n}")
    h = spec.heterogeneity if heterogeneity is None else float(heterogeneity)
    if not 0.0 <= h <= 1.0:
        raise ValueError("heterogeneity must lie in [0, 1]")
    if spec.kind == "quadratic":
        return [Shard(i, shift=_quadratic_shift(spec, i, n, h, seed)) for i in range(n)]
    if spec.kind == "logistic":
        mu = _class_mean(spec, seed, spec.dim)
        shards = []
        for i in range(n):
            u, X = _data_shard(spec, i, h, seed, spec.dim)
            y = np.where(u < 0.5, 1.0, -1.0)
            shards.append(Shard(i, features=X + 1.5 * np.outer(y, mu), targets=y))
        return shards
    teacher = RngStream(seed, 0, 0, "teacher").normal(spec.dim)
    shards = []
    for i in range(n):
        u, X = _data_shard(spec, i, h, seed, spec.dim)
        y = np.tanh(X @ teacher / np.sqrt(spec.dim)) + 0.1 * (u - 0.5)
        shards.append(Shard(i, features=X, targets=y))
    return shards


def build_problem(spec, n_workers, seed=0):
    """Instantiate the problem described by ``spec`` for ``n_workers``."""
    if isinstance(spec, dict):
        spec = ProblemSpec.from_dict(spec)
    shards = make_shards(spec, n_workers, spec.heterogeneity, seed)
    if spec.kind == "quadratic":
        if spec.curvature is not None:
            curvature = np.array(spec.curvature)
        elif spec.dim == 1:
            curvature = np.ones(1)
        else:
            curvature = np.linspace(1.0 / spec.condition, 1.0, spec.dim)
        if spec.optimum is not None:
            optimum = np.array(spec.optimum)
        else:
            optimum = RngStream(seed, 0, 0, "optimum").normal(spec.dim)
        return QuadraticProblem(curvature, optimum, shards, spec.noise_sigma)
    if spec.kind == "logistic":
        return LogisticProblem(shards, spec.noise_sigma, spec.batch_size, spec.l2)
    return MLPProblem(shards, spec.hidden, spec.noise_sigma, spec.batch_size)


# functional surface


def stochastic_grad(p, x, draw):
    return p.stochastic_grad(x, draw)


def full_grad(p, x):
    return p.full_grad(x)


def loss(p, x):
    return p.loss(x)
