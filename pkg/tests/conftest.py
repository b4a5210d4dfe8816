import numpy as np
import pytest

from rydgate.operators import PhysicalConfig
from rydgate.protocol import init_protocol


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training runs")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """Coarse grid that keeps the reference integrators quick."""
    return PhysicalConfig(m=6, n_steps=1024, r=8.0)


@pytest.fixture
def small_theta(small_cfg):
    return init_protocol(np.random.default_rng(5), small_cfg)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(criterion: int, passed: bool, detail: str) -> bool:
        store[criterion] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(store):
        passed, detail = store[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
