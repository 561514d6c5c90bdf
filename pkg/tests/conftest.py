import numpy as np
import pytest

from nlcflow.grid import Grid, SpectralField, dealias
from nlcflow.littlewood_paley import build_partition


@pytest.fixture(scope="session")
def grid():
    return Grid()


@pytest.fixture(scope="session")
def partition(grid):
    return build_partition(grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(grid, rng, c=1, band_limited=True):
    f = SpectralField.from_physical(grid, rng.standard_normal((c, *grid.shape)))
    return dealias(f) if band_limited else f


def single_mode(grid, k, amplitude=1.0, phase="cos"):
    """amplitude * cos or sin of xi_k . x for an integer lattice vector k."""
    arg = sum(2 * np.pi * ki * x / grid.L for ki, x in zip(k, grid.coordinates))
    vals = np.cos(arg) if phase == "cos" else np.sin(arg)
    return SpectralField.from_physical(grid, amplitude * vals)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
