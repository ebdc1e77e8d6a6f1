from pathlib import Path

import numpy as np
import pytest

from privleak import data, synthetic

MINI_DIR = Path(__file__).parent / "data" / "mini"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mini_dir():
    return MINI_DIR


@pytest.fixture(scope="session")
def mini_dataset():
    return data.load_movielens(MINI_DIR)


@pytest.fixture(scope="session")
def small_synth_dir(tmp_path_factory):
    """About 1000 users x 400 items; trains in a second or two."""
    ratings, users = synthetic.generate(n_users=1000, n_items=400, mean_ratings=50, seed=11)
    return synthetic.write_movielens(tmp_path_factory.mktemp("synth_small"), ratings, users)


@pytest.fixture(scope="session")
def small_synth(small_synth_dir):
    return data.load_movielens(small_synth_dir)


@pytest.fixture(scope="session")
def full_synth_dir(tmp_path_factory):
    """MovieLens-1M-sized synthetic data (6040 users x 3706 items)."""
    ratings, users = synthetic.generate(seed=0)
    return synthetic.write_movielens(tmp_path_factory.mktemp("synth_full"), ratings, users)


@pytest.fixture(scope="session")
def full_synth(full_synth_dir):
    return data.load_movielens(full_synth_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
