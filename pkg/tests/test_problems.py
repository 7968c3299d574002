import math

import numpy as np
import pytest

from ecsgd.errors import ConfigError, DimensionMismatch
from ecsgd.numerics import RngStream, ordered_mean
from ecsgd.problems import (
    LogisticProblem,
    ProblemSpec,
    QuadraticProblem,
    build_problem,
    full_grad,
    loss,
    make_shards,
    stochastic_grad,
)
from conftest import mc_mean_within

KINDS = {
    "quadratic": ProblemSpec(kind="quadratic", dim=8, noise_sigma=0.5, heterogeneity=0.7),
    "logistic": ProblemSpec(kind="logistic", dim=6, noise_sigma=0.5, heterogeneity=0.5, samples_per_worker=40),
    "mlp": ProblemSpec(kind="mlp", dim=3, hidden=5, noise_sigma=0.5, heterogeneity=0.5, samples_per_worker=40),
}


def central_difference(f, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_relative_error(problem, x):
    g = problem.full_grad(x)
    fd = central_difference(problem.loss, x)
    return np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)


class TestQuadratic:
    def test_noiseless_gradient(self):
        p = QuadraticProblem([1.0, 2.0, 3.0], [0.5, -1.0, 2.0])
        x = np.array([1.0, 1.0, 1.0])
        draw = p.sample(0, 0, seed=1)
        np.testing.assert_array_equal(stochastic_grad(p, x, draw), [0.5, 4.0, -3.0])
        np.testing.assert_array_equal(full_grad(p, x), [0.5, 4.0, -3.0])

    def test_zero_at_optimum(self):
        p = build_problem(ProblemSpec(kind="quadratic", dim=5), 1, 3)
        assert not p.stochastic_grad(p.optimum, p.sample(0, 0, 3)).any()

    def test_loss_values(self):
        p = QuadraticProblem([1.0], [0.0], f_star=0.0)
        assert loss(p, np.array([2.0])) == 2.0
        p = QuadraticProblem([2.0, 3.0], [1.0, -1.0], f_star=-4.0)
        assert loss(p, p.optimum) == -4.0
        x = np.array([0.0, 0.5])
        assert loss(p, x) - p.f_star == pytest.approx(0.5 * (2.0 * 1.0 + 3.0 * 2.25), rel=1e-15)

    def test_default_curvature_and_smoothness(self):
        p = build_problem(ProblemSpec(kind="quadratic", dim=4, condition=4.0), 1)
        np.testing.assert_allclose(p.curvature, [0.25, 0.5, 0.75, 1.0])
        assert p.smoothness() == 1.0

    def test_noise_moments(self):
        # additive noise has zero mean and E||noise||^2 = sigma^2
        p = build_problem(ProblemSpec(kind="quadratic", dim=10, noise_sigma=1.0), 1, 0)
        x = np.linspace(-1.0, 1.0, 10)
        exact = p.full_grad(x)
        draws = np.array([p.stochastic_grad(x, p.sample(0, t, 17)) for t in range(100_000)])
        mc_mean_within(draws, exact)
        sq = np.sum((draws - exact) ** 2, axis=1).mean()
        assert abs(sq - 1.0) <= 0.1

    def test_shards_cancel(self):
        p = build_problem(ProblemSpec(kind="quadratic", dim=6, heterogeneity=1.0), 5, 2)
        x = np.linspace(0, 1, 6)
        avg = ordered_mean([p.worker_grad(x, i) for i in range(5)])
        np.testing.assert_allclose(avg, p.full_grad(x), rtol=1e-14, atol=1e-15)
        assert not np.allclose(p.worker_grad(x, 0), p.worker_grad(x, 1))


class TestLogistic:
    def test_symmetric_data_zero_gradient(self):
        X = np.array([[1.0, 2.0], [1.0, 2.0], [-3.0, 0.5], [-3.0, 0.5]])
        y = np.array([1.0, -1.0, 1.0, -1.0])
        p = LogisticProblem.from_arrays([X], [y])
        assert not p.full_grad(np.zeros(2)).any()
        assert p.loss(np.zeros(2)) == pytest.approx(math.log(2.0), rel=1e-15)

    def test_heterogeneous_shards(self):
        n = 4
        p = build_problem(ProblemSpec(kind="logistic", dim=5, heterogeneity=1.0, samples_per_worker=64, batch_size=8), n, 3)
        x = np.full(5, 0.1)
        per_worker = [p.worker_grad(x, i) for i in range(n)]
        assert min(np.linalg.norm(per_worker[i] - per_worker[j]) for i in range(n) for j in range(i)) > 1e-2
        draws = [ordered_mean([p.stochastic_grad(x, p.sample(i, t, 8)) for i in range(n)]) for t in range(5000)]
        mc_mean_within(draws, p.full_grad(x))


class TestShards:
    def test_single_worker(self):
        for kind, spec in KINDS.items():
            assert len(make_shards(spec, 1, seed=0)) == 1

    def test_rejects_zero_workers(self):
        with pytest.raises(ValueError):
            make_shards(KINDS["quadratic"], 0)

    def test_rejects_bad_heterogeneity(self):
        with pytest.raises(ValueError):
            make_shards(KINDS["quadratic"], 2, heterogeneity=1.5)

    def test_deterministic(self):
        for spec in KINDS.values():
            a, b = make_shards(spec, 3, seed=5), make_shards(spec, 3, seed=5)
            for s, t in zip(a, b):
                for name in ("shift", "features", "targets"):
                    u, v = getattr(s, name), getattr(t, name)
                    assert (u is None and v is None) or np.array_equal(u, v)

    def test_homogeneous_quadratic_identical(self):
        shards = make_shards(KINDS["quadratic"], 4, heterogeneity=0.0)
        assert all(not s.shift.any() for s in shards)

    def test_homogeneous_data_means_match(self):
        spec = ProblemSpec(kind="logistic", dim=3, samples_per_worker=4000)
        shards = make_shards(spec, 3, heterogeneity=0.0, seed=1)
        means = [s.features.mean(0) for s in shards]
        se = shards[0].features.std(0) / math.sqrt(4000)
        for m in means[1:]:
            # difference of two independent means has sd sqrt(2) * se
            assert np.all(np.abs(m - means[0]) <= 4 * math.sqrt(2) * se)


class TestGradientOracles:
    @pytest.mark.parametrize("kind", sorted(KINDS))
    def test_full_grad_finite_differences(self, kind):
        p = build_problem(KINDS[kind], 3, seed=4)
        for k in range(10):
            x = RngStream(77, k, 0, "fd-point").normal(p.dim)
            assert fd_relative_error(p, x) <= 1e-5

    @pytest.mark.parametrize("kind", sorted(KINDS))
    def test_worker_grad_finite_differences(self, kind):
        p = build_problem(KINDS[kind], 2, seed=4)
        x = RngStream(78, 0, 0).normal(p.dim)
        for i in range(2):
            g = p.worker_grad(x, i)
            fd = central_difference(lambda z: p.worker_loss(z, i), x)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1e-12)

    @pytest.mark.parametrize("kind", sorted(KINDS))
    def test_descent(self, kind):
        p = build_problem(KINDS[kind], 2, seed=6)
        x = RngStream(6, 0, 0).normal(p.dim)
        assert p.loss(x - 1e-4 * p.full_grad(x)) < p.loss(x)

    @pytest.mark.parametrize("kind", ["logistic", "mlp"])
    def test_stochastic_grad_unbiased_per_worker(self, kind):
        spec = KINDS[kind]
        p = build_problem(ProblemSpec(**{**spec.to_dict(), "noise_sigma": 0.0}), 1, seed=2)
        x = RngStream(5, 0, 0).normal(p.dim) * 0.3
        draws = [p.stochastic_grad(x, p.sample(0, t, 3)) for t in range(4000)]
        mc_mean_within(draws, p.worker_grad(x, 0))


class TestVariance:
    def test_scales_as_one_over_n(self):
        from ecsgd.analysis import xi_second_moment

        x = np.linspace(-1, 1, 10)
        for n in (1, 4):
            p = build_problem(ProblemSpec(kind="quadratic", dim=10, noise_sigma=1.0), n, 5)
            assert xi_second_moment(p, x, 4000, seed=9) * n == pytest.approx(1.0, rel=0.15)


class TestErrors:
    @pytest.mark.parametrize("kind", sorted(KINDS))
    def test_dimension_mismatch(self, kind):
        p = build_problem(KINDS[kind], 1)
        with pytest.raises(DimensionMismatch):
            p.full_grad(np.zeros(p.dim + 1))
        with pytest.raises(DimensionMismatch):
            p.loss(np.zeros(p.dim + 1))

    @pytest.mark.parametrize(
        "kw",
        [{"kind": "svm"}, {"dim": 0}, {"noise_sigma": -1.0}, {"heterogeneity": 2.0}, {"dim": 2, "curvature": (1.0,)}],
    )
    def test_spec_validation(self, kw):
        with pytest.raises(ConfigError):
            ProblemSpec(**kw)

    def test_spec_round_trip(self):
        for spec in KINDS.values():
            assert ProblemSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ProblemSpec.from_dict({"kind": "quadratic", "dims": 3})
