import math
import os

import numpy as np

import pytest
from hypothesis import HealthCheck, settings

from ecsgd.compression import CompressorSpec
from ecsgd.config import GammaSchedule, TrainConfig
from ecsgd.problems import ProblemSpec

settings.register_profile(
    "default",
    deadline=None,
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", "60")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def make_config(algorithm="vanilla", compressor=None, server=None, n=1, T=10, gamma=0.1, seed=0, problem=None, **kw):
    """Short-hand TrainConfig builder used across the suite."""
    worker = compressor if compressor is not None else CompressorSpec("identity")
    return TrainConfig(
        name=kw.pop("name", algorithm),
        algorithm=algorithm,
        worker_compressor=worker,
        server_compressor=server,
        n_workers=n,
        iterations=T,
        gamma=gamma if isinstance(gamma, GammaSchedule) else GammaSchedule("constant", float(gamma)),
        seed=seed,
        problem=problem if problem is not None else ProblemSpec(kind="quadratic", dim=5, noise_sigma=1.0),
        **kw,
    )


@pytest.fixture
def cfg_factory():
    return make_config


def mc_mean_within(samples, target, n_se=4.0):
    """Elementwise Monte-Carlo mean test against ``target``.

    Columns with no spread (deterministic entries) must equal the target
    exactly; otherwise |mean - target| <= n_se standard errors, with the
    mean accumulated by an exactly rounded sum.
    """
    samples = np.asarray(samples, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n = samples.shape[0]
    worst = 0.0
    for j in range(samples.shape[1]):
        col = samples[:, j]
        if col.min() == col.max():
            assert col[0] == target[j], (j, col[0], target[j])
            continue
        mean = math.fsum(col.tolist()) / n
        se = col.std(ddof=1) / math.sqrt(n)
        z = abs(mean - target[j]) / se
        assert z <= n_se, (j, mean, target[j], se)
        worst = max(worst, z)
    return worst


# --- acceptance reporting -------------------------------------------------

_CRITERIA = {}


class _Criterion:
    def __init__(self, number, title, capmanager):
        self.number = number
        self.title = title
        self.detail = ""
        self._capman = capmanager

    def __enter__(self):
        import time

        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time

        elapsed = time.perf_counter() - self._t0
        status = "PASS" if exc_type is None else "FAIL"
        why = self.detail if exc_type is None else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        line = f"[{status}] criterion {self.number:>2}: {self.title} ({elapsed:.2f} s) {why}".rstrip()
        _CRITERIA[self.number] = line
        with self._capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return False


@pytest.fixture
def criterion(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def open_criterion(number, title):
        return _Criterion(number, title, capman)

    return open_criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
