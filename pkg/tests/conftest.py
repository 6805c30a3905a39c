import os

import pytest
from hypothesis import settings

# first calls trigger numba compilation
settings.register_profile("freearc", deadline=None)
settings.load_profile("freearc")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow lattice (DGFF) checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running lattice check (opt-in via --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("FREEARC_RUNSLOW"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
