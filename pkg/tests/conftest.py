import numpy as np
import pytest

from msc.comm import LocalCluster


@pytest.fixture(scope="session")
def clusters():
    """Persistent local worker pools keyed by process count, started lazily."""
    pools = {}

    def get(p):
        if p not in pools:
            pools[p] = LocalCluster(p).start()
        return pools[p]

    yield get
    for pool in pools.values():
        pool.close()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
