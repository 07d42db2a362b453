import numpy as np
import pytest

from survhte.config import ScenarioSpec
from survhte.dgp import arr_grid, calibrate


@pytest.fixture(scope="session")
def desk_config():
    return ScenarioSpec().generator_config()


@pytest.fixture(scope="session")
def desk_curve(desk_config):
    return calibrate(desk_config, mc_size=100_000, seed=0)


@pytest.fixture(scope="session")
def desk_points(desk_curve):
    return arr_grid(desk_curve, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
