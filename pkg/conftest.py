"""Shared pytest fixtures: seeded generators, tiny corpora and the --runslow switch."""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from utilities.make_corpus import write_corpus


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the desk-scale training acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: minutes-long training runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """12 synthetic 64x64 images in 4 class sub-directories."""
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, per_class=3, size=64, seed=0)
    return root


@pytest.fixture(scope="session")
def ten_image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("ten")
    write_corpus(root, per_class=5, size=64, seed=3, classes=("stripes", "rings"))
    return root
