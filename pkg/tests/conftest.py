import numpy as np
import pytest

from bess_opm.cell import CellParameters, CellState, PackParameters
from bess_opm.problem import OpmConfig


@pytest.fixture
def cell_params():
    return CellParameters()


@pytest.fixture
def cell_params_no_rc():
    return CellParameters(converter_res=0.0)


def make_pack(n, seed=0, soc=(0.70, 0.75), temp=(298.0, 298.0), res=(0.0313, 0.0413)):
    rng = np.random.default_rng(seed)
    params = PackParameters(n=n, res_base=rng.uniform(*res, n))
    state = CellState(rng.uniform(*soc, n), rng.uniform(*temp, n))
    return params, state


@pytest.fixture
def small_pack():
    return make_pack(4, seed=3)


@pytest.fixture
def opm_small():
    return OpmConfig(horizon=3)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
