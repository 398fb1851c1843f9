import pytest

from models import init_gaussian
from utils.datasets import TaskSpec, generate


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def adding_task():
    return TaskSpec("adding", 10)


@pytest.fixture
def small_net():
    return init_gaussian(2, 4, 1, 0.5, seed=11)


@pytest.fixture
def adding_batch(adding_task):
    return generate(adding_task, 6, seed=5)
