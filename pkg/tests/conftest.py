import numpy as np
import pytest

from dobrushin.kernel import two_state
from dobrushin.schedule import example_kernel


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def Q():
    return two_state


@pytest.fixture
def ex1():
    return example_kernel(1, 0.2)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_line(number))
