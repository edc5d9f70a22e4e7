import numpy as np
import pytest

from accel.core import LAVA, MAZE, Level, TerrainPayload, TERRAIN
from accel.env_grid import GridDRConfig, grid_sample_dr, parse_art
from accel.env_terrain import terrain_sample_dr


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_maze():
    return parse_art(MAZE, ["A..", "...", "..G"], level_id=7)


def random_grid(rng, kind=MAZE, size=7, hi=20, level_id=0):
    cfg = GridDRConfig(size, size, 0, hi, randomize_facing=(kind == MAZE))
    return grid_sample_dr(rng, kind, cfg, level_id)


def random_terrain(rng, mode=5, level_id=0):
    return terrain_sample_dr(rng, mode, level_id)


# -- acceptance summary ---------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
