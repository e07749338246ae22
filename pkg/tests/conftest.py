import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, derandomize=True, max_examples=100)
settings.load_profile("default")


def spd(rng, q, cond=1e3):
    """Random SPD matrix with bounded condition number."""
    qmat, _ = np.linalg.qr(rng.standard_normal((q, q)))
    eig = np.exp(rng.uniform(0, np.log(cond), size=q))
    return (qmat * eig) @ qmat.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(label, ok, detail)``; asserts ``ok``."""
    lines = request.config.stash[VERDICTS]

    def record(label, ok, detail=""):
        line = f"criterion {label:<22} {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
