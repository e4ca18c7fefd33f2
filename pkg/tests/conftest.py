import numpy as np
import pytest

from solcorr.cgle import PAPER_PARAMS, StepScheme
from solcorr.grid import make_grid
from solcorr.states import BoundStateSpec, compose_bound_state, relax_bound_state, relax_single_soliton


@pytest.fixture(scope="session")
def grid512():
    return make_grid(512, 20.0)


@pytest.fixture(scope="session")
def cgle_single(grid512):
    """Relaxed single dissipative soliton on the 512-point, 20-unit grid."""
    u, report = relax_single_soliton(PAPER_PARAMS, grid512, 2.0, 1.0, StepScheme(1e-3), 100.0)
    return u, report


@pytest.fixture(scope="session")
def cgle_pair(cgle_single):
    u0, _ = cgle_single
    init = compose_bound_state(u0, BoundStateSpec.equally_spaced(2, 2.5, [0.0, 0.0]))
    u, report = relax_bound_state(PAPER_PARAMS, init, StepScheme(1e-3), 100.0, template=u0)
    return u, report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def record_criterion():
    def record(number, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
