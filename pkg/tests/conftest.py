import sys

import numpy as np
import pytest

from adoptnet import make_scenario

SCALAR = dict(beta=0.4, gamma=0.3, theta=0.1, delta=0.2, lam=0.5, xi=0.2)


def scalar_scenario(**overrides):
    """One community on both layers; keyword overrides for rates, ``prejudice`` and state."""
    kw = dict(SCALAR, prejudice=0.5)
    kw.update(overrides)
    return make_scenario([[1.0]], [[1.0]], **kw)


def random_stochastic(rng, n, p=0.5):
    """Row-stochastic matrix with a ring backbone (strongly connected)."""
    W = (rng.random((n, n)) < p) * rng.random((n, n))
    for j in range(n):
        W[j, (j + 1) % n] += 0.5
    return W / W.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria gate")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "GATE_LINES", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
