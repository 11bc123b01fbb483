import numpy as np
import pytest

from ivintegral.estimation import build_kernel, build_rhs
from ivintegral.model import draw_sample_set, null_scenario, scenario_s1
from ivintegral.solver import assemble_system, make_grid

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class Pipeline:
    """S1 (or another scenario) pushed through simulation, kernel, rhs and assembly."""

    def __init__(self, scenario, n, seed, j_points=201, pad=0.1):
        self.scenario = scenario
        self.samples = draw_sample_set(scenario, n, seed)
        self.grid = make_grid(self.samples, j_points, pad)
        self.kernel = build_kernel(self.samples, self.grid.x_grid)
        self.rhs = build_rhs(self.samples)
        self.A = assemble_system(self.kernel, self.grid)


@pytest.fixture(scope="session")
def s1():
    return scenario_s1()


@pytest.fixture(scope="session")
def s1_pipeline(s1):
    return Pipeline(s1, 200_000, 0)


@pytest.fixture(scope="session")
def null_pipeline():
    return Pipeline(null_scenario(), 200_000, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
