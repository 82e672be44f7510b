import numpy as np
import pytest

from dahr.model_core import Shard


def random_shard(rng, n, p, noise=1.0, beta=None, shard_id=0):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = rng.standard_normal(p) if beta is None else beta
    y = X @ beta + noise * rng.standard_normal(n)
    return Shard(shard_id, y, X)


def random_shards(rng, m, n, p, noise=1.0, beta=None):
    beta = rng.standard_normal(p) if beta is None else beta
    return [random_shard(rng, n, p, noise, beta, j) for j in range(m)], beta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
