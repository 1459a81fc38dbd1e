import numpy as np
import pytest

from spadesct.core import ScanGeometry
from spadesct.radon import RadonOperator


@pytest.fixture(scope="session")
def geo32():
    return ScanGeometry(45, 47, 32)


@pytest.fixture(scope="session")
def op32(geo32):
    return RadonOperator(geo32)


@pytest.fixture(scope="session")
def geo64():
    return ScanGeometry(90, 95, 64)


@pytest.fixture(scope="session")
def op64(geo64):
    return RadonOperator(geo64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
