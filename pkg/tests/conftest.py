import numpy as np
import pytest

from rsscoloc.rss_model import ChannelParams

_CRITERIA = []


@pytest.fixture
def params():
    return ChannelParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """Record one acceptance line; lines are printed in the terminal summary."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
