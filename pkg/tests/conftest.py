import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from _support import vanilla_pipeline  # noqa: E402

from vkdlab import synthbench as sb  # noqa: E402


@pytest.fixture(scope="session")
def data0():
    return sb.generate(0)


@pytest.fixture(scope="session")
def pipeline0():
    return vanilla_pipeline(0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance")
        for line in RESULTS:
            terminalreporter.write_line(line)
