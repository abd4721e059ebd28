import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("kf", max_examples=60, deadline=None)
settings.load_profile("kf")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import _verdicts
    if _verdicts.LINES:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts.LINES:
            terminalreporter.write_line(line)
