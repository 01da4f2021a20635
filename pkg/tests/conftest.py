from __future__ import annotations

import numpy as np
import pytest

from planadapt.config import RunConfig
from planadapt.env import MazeWorld, load_maze, load_maze_file

DOOR_MAP = "#####\n#.#.#\n#.#.#\n#...#\n#####"
OPEN_ROOM = "#####\n#...#\n#...#\n#...#\n#####"
TWO_ROOMS = "\n".join(
    ["############"]
    + ["#....#.....#"] * 5
    + ["#..........#", "############"]
)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def door_world() -> MazeWorld:
    return load_maze(DOOR_MAP, noise_std=0.0)


@pytest.fixture
def open_room() -> MazeWorld:
    return load_maze(OPEN_ROOM, noise_std=0.0)


@pytest.fixture
def two_rooms() -> MazeWorld:
    return load_maze(TWO_ROOMS, noise_std=0.1)


@pytest.fixture(scope="session")
def default_world() -> MazeWorld:
    return load_maze_file("default")


@pytest.fixture(scope="session")
def configured_world() -> MazeWorld:
    """The default map with the shipped run configuration (waypoint clearance)."""
    return RunConfig().world()
