import numpy as np
import pytest

from ctmlab.grid import Grid, PlumeSpec
from ctmlab.wind import BICKLEY_LX, BICKLEY_LY, make_wind


@pytest.fixture
def grid():
    return Grid(16, 12, 1.0e5, 1.0e5)


@pytest.fixture
def tiny_grid():
    return Grid(8, 8, 1.0e5, 1.0e5)


@pytest.fixture
def bickley_grid():
    return Grid.from_extent(32, 16, BICKLEY_LX, BICKLEY_LY, 0.0, -0.5 * BICKLEY_LY)


@pytest.fixture
def bickley(bickley_grid):
    return make_wind("bickley_jet", {}, bickley_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def centered_plume(grid, cells_x, cells_y, background=1.0, excess_factor=2.0):
    """Plume covering a whole number of cells around the domain middle."""
    cx = grid.x0 + (grid.nx // 2) * grid.dx
    cy = grid.y0 + (grid.ny // 2) * grid.dy
    return PlumeSpec((cx, cy), cells_x * grid.dx, cells_y * grid.dy, background, excess_factor)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
