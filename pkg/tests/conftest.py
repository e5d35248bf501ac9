import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20241018)


def pytest_terminal_summary(terminalreporter):
    # acceptance lines are collected by tests/test_acceptance.py
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
