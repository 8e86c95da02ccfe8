"""Shared fixtures/helpers and the acceptance-line terminal summary."""

import numpy as np
import pytest

#: pass/fail lines collected by tests/test_acceptance.py, echoed at the end of
#: the pytest run so they are visible even when output capture is on
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spd(rng, d, jitter=0.1):
    a = rng.standard_normal((d, d))
    return a @ a.T + jitter * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
