import sys
import numpy as np
import pytest

from semisupcon.numerics import SeededRng, row_normalize


@pytest.fixture
def rng():
    return SeededRng(20240611)


def unit_rows(rng, n, d):
    return row_normalize(rng.normal(size=(n, d)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
