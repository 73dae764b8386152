import numpy as np
import pytest
from click.testing import CliRunner

from conservation_rl.app import create_app
from conservation_rl.config import TestingConfig
from conservation_rl.conservation import ConservationEnv, ConservationParams
from conservation_rl.decision_process import BoxSpace
from conservation_rl.fishery import FisheryEnv, FisheryParams
from conservation_rl.neural import Mlp
from conservation_rl.td3 import Td3Agent, Td3Hyperparams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def app():
    return create_app(TestingConfig)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tmp_run_dir(tmp_path):
    directory = tmp_path / "run"
    directory.mkdir()
    return directory


@pytest.fixture
def make_fishery():
    def _make_fishery(seed=0, **changes):
        env = FisheryEnv(FisheryParams(**changes), seed=seed)
        env.reset(seed=seed)
        return env

    return _make_fishery


@pytest.fixture
def make_conservation():
    def _make_conservation(seed=0, **changes):
        env = ConservationEnv(ConservationParams(**changes), seed=seed)
        env.reset(seed=seed)
        return env

    return _make_conservation


@pytest.fixture
def make_mlp():
    def _make_mlp(sizes=(2, 8, 8, 1), hidden="softplus", output="identity", low=None, high=None, seed=0):
        return Mlp(sizes, hidden=hidden, output=output, low=low, high=high, rng=np.random.default_rng(seed))

    return _make_mlp


@pytest.fixture
def make_agent():
    def _make_agent(observation_box=None, action_box=None, buffer_capacity=256, **hyper):
        observation_box = observation_box or BoxSpace.interval(0.0, 2.0)
        action_box = action_box or BoxSpace.interval(0.0, 2.0)
        settings = {"hidden_sizes": (8, 8), "batch_size": 8, "warmup_steps": 0, "seed": 0}
        settings.update(hyper)
        params = Td3Hyperparams(**settings)
        return Td3Agent(observation_box, action_box, params, rng=np.random.default_rng(params.seed),
                        buffer_capacity=buffer_capacity)

    return _make_agent
