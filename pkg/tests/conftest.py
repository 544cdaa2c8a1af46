import numpy as np
import pytest

from shellvk.geometry import Chart
from shellvk.material import MaterialModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stvk():
    return MaterialModel(1.0, 1.0)


CHARTS = {
    "plate": Chart.plate(),
    "cylinder": Chart.cylinder(),
    "sphere": Chart.sphere(),
}


@pytest.fixture(params=sorted(CHARTS))
def chart(request):
    return CHARTS[request.param]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
