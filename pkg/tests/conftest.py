import sys

import numpy as np
import pytest

from catbsi.rng import CounterRNG
from catbsi.schedule import PrecisionSchedule


@pytest.fixture
def rng():
    return CounterRNG(1234)


@pytest.fixture
def moses():
    """The (3, 12, 1) schedule over three classes with zero prior mean."""
    return PrecisionSchedule(3.0, 12.0, 1.0, np.zeros(3))


def pytest_terminal_summary(terminalreporter):
    from catbsi.kernels import BACKEND

    terminalreporter.write_line(f"catbsi kernel backend: {BACKEND}")

    results = [m.RESULTS for name, m in sys.modules.items()
               if name.endswith("test_acceptance") and hasattr(m, "RESULTS")]
    if results and results[0]:
        terminalreporter.section("acceptance criteria")
        for line in results[0]:
            terminalreporter.write_line(line)
