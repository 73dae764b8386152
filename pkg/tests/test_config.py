import os

import pytest

from conservation_rl.config import (
    Config,
    RunConfig,
    TestingConfig,
    load_run_config,
)
from conservation_rl.errors import ConfigurationError
from conservation_rl.experiments import Knob

DEFAULT_INI = os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs", "default.ini")


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_committed_config_matches_dataclass_defaults():
    from_file = load_run_config(DEFAULT_INI)
    defaults = RunConfig()
    assert from_file.run == defaults.run
    assert from_file.fishery == defaults.fishery
    assert from_file.conservation == defaults.conservation
    assert from_file.td3 == defaults.td3
    assert from_file.experiment == defaults.experiment
    assert from_file.search.search_space().knobs == from_file.search.knobs
    assert from_file.search.knobs["actor_lr"] == Knob(1e-4, 3e-3, log=True)


def test_overrides_beat_file_which_beats_defaults(tmp_path):
    path = _write(tmp_path / "run.ini", "[run]\nseed = 4\nenv = conservation\n[td3]\nhidden_sizes = 32, 16\n")
    resolved = load_run_config(path, overrides={"run": {"seed": 9, "env": None}})
    assert resolved.seed == 9
    assert resolved.env == "conservation"
    assert resolved.td3.hidden_sizes == (32, 16)
    assert resolved.hyperparams().seed == 9


def test_process_defaults_sit_below_the_file(tmp_path):
    path = _write(tmp_path / "run.ini", "[experiment]\nreplicates = 7\n")
    defaults = {"experiment": {"replicates": 50, "eval_episodes": 3}}
    resolved = load_run_config(path, defaults=defaults)
    assert resolved.experiment.replicates == 7
    assert resolved.experiment.eval_episodes == 3


def test_empty_values_mean_none(tmp_path):
    path = _write(tmp_path / "run.ini", "[conservation]\nx0 =\n[experiment]\nvi_horizon = none\n")
    resolved = load_run_config(path)
    assert resolved.conservation.x0 is None
    assert resolved.experiment.vi_horizon is None


@pytest.mark.parametrize("text", [
    "[fishery]\ngrowth = 0.3\n",
    "[physics]\ng = 9.81\n",
    "[td3]\nbatch_size = many\n",
    "[td3]\nbatch_size = 1.5\n",
    "[search]\nlearning_rate = 0.1, 0.2\n",
    "[search]\nactor_lr = 0.1\n",
    "[run]\nenv = ocean\n",
    "[experiment]\nvi_kernel = cubic\n",
    "[experiment]\nvi_tail_sds = 0\n",
])
def test_invalid_config_is_rejected(tmp_path, text):
    path = _write(tmp_path / "bad.ini", text)
    with pytest.raises(ConfigurationError):
        load_run_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "absent.ini")


def test_environment_factory_follows_selection():
    fishery = load_run_config(overrides={"run": {"env": "fishery"}})
    conservation = load_run_config(overrides={"run": {"env": "conservation"}})
    assert fishery.env_factory()(0).observation_box.dim == 1
    assert conservation.env_factory()(0).observation_box.dim == 2
    assert conservation.env_params is conservation.conservation


def test_config_hash_tracks_results_not_output_location():
    base = load_run_config()
    moved = load_run_config(overrides={"run": {"output_dir": "/somewhere/else"}})
    reseeded = load_run_config(overrides={"run": {"seed": 1}})
    assert base.config_hash == moved.config_hash
    assert base.config_hash != reseeded.config_hash
    assert len(base.config_hash) == 64


def test_testing_config_is_quiet_and_serial():
    assert TestingConfig.LOG_LEVEL == "WARNING"
    assert TestingConfig.MAX_WORKERS == 1
    assert issubclass(TestingConfig, Config)
