import numpy as np
import pytest

from scialign import world as W


@pytest.fixture(scope="session")
def world():
    return W.World()


@pytest.fixture(scope="session")
def small_manifest(world, tmp_path_factory):
    """Small but complete dataset shared by the fast unit tests."""
    root = tmp_path_factory.mktemp("dataset")
    cfg = W.WorldConfig(seed=11, train_per_combo=2, test_per_combo=3)
    return W.build_dataset(world, cfg, root)


@pytest.fixture(scope="session")
def sample_tuple(world):
    return W.realize_tuple(world.task("ripeness"), "apple", "unripe", "simple", 3)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
