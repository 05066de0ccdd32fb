import re

import numpy as np
import pytest

from liquidation.hjb import SolverGrid
from liquidation.impact import ProblemSpec, linear
from liquidation.lob import LobSnapshot
from liquidation.presets import SIGMA, SPREAD, scenario_spec

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=_criterion_order):
        terminalreporter.write_line(line)


def _criterion_order(line):
    tag = line.split()[1].rstrip(":")
    digits = re.match(r"\d+", tag).group()
    return int(digits), tag


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for the acceptance summary and return the verdict."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


@pytest.fixture(scope="session")
def reference_grid():
    return SolverGrid(T=1.0, s_max=300.0, q_max=1.0, n_t=360, n_s=10, n_q=100)


@pytest.fixture(scope="session")
def small_grid():
    return SolverGrid(T=1.0, s_max=300.0, q_max=1.0, n_t=40, n_s=10, n_q=20)


@pytest.fixture(scope="session")
def linear_spec():
    return scenario_spec("under", "linear", "linear", drop_ppi_intercept=True)


@pytest.fixture(scope="session")
def quadratic_spec(linear_spec):
    from liquidation.impact import quadratic

    return ProblemSpec(linear_spec.tpi, quadratic(0.01, 0.0, 0.0), SIGMA, SPREAD)


@pytest.fixture
def free_spec():
    return ProblemSpec(linear(0.0), linear(0.0), sigma=0.0, delta=0.0)


def book(bids, asks=None, ts=0.0, depth=100):
    if asks is None:
        top = bids[0][0]
        asks = [(top + 1.0, 1e6)]
    return LobSnapshot(ts, np.array(bids, dtype=float), np.array(asks, dtype=float), depth)
