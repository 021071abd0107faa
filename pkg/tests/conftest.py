import numpy as np
import pytest
from hypothesis import settings

from hvf import maze_env
from hvf.maze_env import MazeState, WallLayout

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# lines recorded by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


EMPTY = WallLayout((), ())


@pytest.fixture
def empty_layout() -> WallLayout:
    return EMPTY


@pytest.fixture
def two_wall_layout() -> WallLayout:
    return WallLayout((0.33, 0.66), (0.2, 0.8))


@pytest.fixture
def hard_scene() -> MazeState:
    return maze_env.sample_scene("hard", np.random.default_rng(7))


def empty_state(agent, goal=(0.9, 0.9)) -> MazeState:
    return MazeState(tuple(map(float, agent)), tuple(map(float, goal)), EMPTY)
