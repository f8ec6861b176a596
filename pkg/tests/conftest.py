import numpy as np
import pytest

from ltlstitch import world
from ltlstitch.pipeline import Settings, build_artifact

# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def medium_maze():
    return world.make_maze("medium", seed=0)


@pytest.fixture(scope="session")
def medium_stitch(medium_maze):
    return world.gen_dataset(medium_maze, "stitch", seed=0)


@pytest.fixture(scope="session")
def medium_artifact(medium_stitch):
    return build_artifact(medium_stitch, Settings())


@pytest.fixture(scope="session")
def small_maze():
    return world.make_maze(10, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_maze):
    return world.gen_dataset(small_maze, "stitch", seed=1, n_rollouts=40, max_len=150)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_embedding(small_dataset):
    from ltlstitch.embed import fit, harvest
    return fit(harvest(small_dataset))


@pytest.fixture(scope="session")
def small_graph(small_dataset, small_embedding):
    from ltlstitch.graph import build_graph
    return build_graph(small_dataset, small_embedding, 8.0)
