import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stquantile.model import SpatioTemporalDataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(Y, X=None):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, p = Y.shape
    X = np.linspace(0, 1, n)[:, None] if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    return SpatioTemporalDataset(np.linspace(0, 1, n), Y, X, [f"s{j}" for j in range(p)])


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"CRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
