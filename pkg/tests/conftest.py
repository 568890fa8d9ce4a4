import numpy as np
import pytest

from adaptive_dc import CommGraph, reference_c1_gains, reference_plant_params

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_line(request):
    """Record one pass/fail line; printed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(label: str, passed: bool, detail: str):
        line = f"{label:<34} {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def params():
    return reference_plant_params()


@pytest.fixture
def gains():
    return reference_c1_gains()


@pytest.fixture
def path3():
    return CommGraph.path(3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
