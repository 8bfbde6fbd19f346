import pytest

from sfapanel.estimator import EstimationConfig, estimate, prepare
from sfapanel.simulate import generate_panel

from _support import small_spec


@pytest.fixture(scope="session")
def sim_data():
    return generate_panel(small_spec(n_firms=80, n_periods=(4, 8), seed=17))


@pytest.fixture(scope="session")
def sim_fit(sim_data):
    tp = prepare(sim_data)
    return tp, estimate(tp, EstimationConfig(multistart=2, seed=4))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
