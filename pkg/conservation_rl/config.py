"""
Configuration for conservation_rl.

Two layers:

* Process settings (`Config` and its subclasses) come from environment
  variables, optionally loaded from a `.env` file by `create_app`.
* Run settings (`RunConfig`) come from an INI file with one section per
  component.  Unknown sections or keys are rejected so a typo in a tuning
  sweep fails loudly.  Command-line overrides beat the file, which beats
  the dataclass defaults.
"""
from __future__ import annotations

import configparser
import os
import types
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from functools import partial
from typing import Any, Mapping

from .conservation import ConservationParams, make_conservation_env
from .errors import ConfigurationError
from .experiments import Knob, SearchSpace
from .fishery import FisheryParams, make_fishery_env
from .helpers import config_hash
from .td3 import EnvFactory, Td3Hyperparams

ENVIRONMENTS = ("fishery", "conservation")


class Config:
    """Base process settings."""

    LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO")
    LOG_JSON = os.environ.get("LOG_JSON", "True") == "True"
    OUTPUT_DIR = os.environ.get("OUTPUT_DIR", os.path.join(os.getcwd(), "runs"))
    DEFAULT_REPLICATES = int(os.environ.get("DEFAULT_REPLICATES", 100))
    DEFAULT_EVAL_EPISODES = int(os.environ.get("DEFAULT_EVAL_EPISODES", 10))
    # >1 fans replicates and tuning trials out over a process pool.
    MAX_WORKERS = int(os.environ.get("MAX_WORKERS", 1))


class DevelopmentConfig(Config):
    DEBUG = True


class ProductionConfig(Config):
    DEBUG = False


class TestingConfig(Config):
    """Quiet, single-process settings for the test suite."""

    TESTING = True
    LOG_LEVEL = "WARNING"
    LOG_JSON = True
    MAX_WORKERS = 1


@dataclass(frozen=True)
class ExperimentSettings:
    replicates: int = 100
    eval_episodes: int = 10
    # Escapement threshold for the constant-escapement baseline; empty means K/2.
    escapement: float | None = None
    state_grid: int = 400
    action_grid: int = 400
    # Placement of noise-free destinations: nearest grid state or a linear split.
    vi_kernel: str = "nearest"
    vi_tail_sds: float = 6.0
    vi_gamma: float = 0.99
    vi_epsilon: float = 1e-8
    vi_max_iters: int = 10_000
    vi_horizon: int | None = None
    curve_points: int = 101
    bifurcation_points: int = 401
    m_min: float = 0.0
    m_max: float = 0.3
    max_workers: int = 1
    output_format: str = "csv"

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigurationError(f"replicates must be >= 1, got {self.replicates}")
        if self.eval_episodes < 1:
            raise ConfigurationError(f"eval_episodes must be >= 1, got {self.eval_episodes}")
        if self.curve_points < 2 or self.bifurcation_points < 2:
            raise ConfigurationError("curve_points and bifurcation_points must be >= 2")
        if not self.m_max > self.m_min >= 0:
            raise ConfigurationError(f"bifurcation range must satisfy 0 <= m_min < m_max, got [{self.m_min}, {self.m_max}]")
        if self.vi_kernel not in ("nearest", "linear"):
            raise ConfigurationError(f"vi_kernel must be nearest or linear, got {self.vi_kernel!r}")
        if not self.vi_tail_sds > 0:
            raise ConfigurationError(f"vi_tail_sds must be positive, got {self.vi_tail_sds}")
        if self.output_format not in ("csv", "xlsx"):
            raise ConfigurationError(f"output_format must be csv or xlsx, got {self.output_format!r}")


@dataclass(frozen=True)
class SearchSettings:
    n_trials: int = 20
    # Empty means a quarter of the [td3] total_env_steps.
    trial_budget: int | None = None
    knobs: dict[str, Knob] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigurationError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.trial_budget is not None and self.trial_budget < 1:
            raise ConfigurationError(f"trial_budget must be >= 1, got {self.trial_budget}")

    def search_space(self) -> SearchSpace:
        return SearchSpace(dict(self.knobs)) if self.knobs else SearchSpace.default()


@dataclass(frozen=True)
class RunSettings:
    env: str = "fishery"
    seed: int = 0
    # Empty falls back to the OUTPUT_DIR process setting.
    output_dir: str | None = None

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigurationError(f"unknown environment {self.env!r}; choose one of {', '.join(ENVIRONMENTS)}")


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    fishery: FisheryParams = field(default_factory=FisheryParams)
    conservation: ConservationParams = field(default_factory=ConservationParams)
    td3: Td3Hyperparams = field(default_factory=Td3Hyperparams)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    search: SearchSettings = field(default_factory=SearchSettings)

    @property
    def env(self) -> str:
        return self.run.env

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def env_params(self) -> FisheryParams | ConservationParams:
        return self.fishery if self.env == "fishery" else self.conservation

    def env_factory(self) -> EnvFactory:
        """Picklable seed -> environment factory for the selected environment."""
        if self.env == "fishery":
            return partial(make_fishery_env, self.fishery)
        return partial(make_conservation_env, self.conservation)

    def hyperparams(self) -> Td3Hyperparams:
        return self.td3.replace(seed=self.seed)

    def to_dict(self) -> dict:
        payload = {
            "run": asdict(self.run),
            "fishery": asdict(self.fishery),
            "conservation": asdict(self.conservation),
            "td3": self.td3.to_dict(),
            "experiment": asdict(self.experiment),
            "search": {
                "n_trials": self.search.n_trials,
                "trial_budget": self.search.trial_budget,
                "knobs": {name: asdict(knob) for name, knob in sorted(self.search.knobs.items())},
            },
        }
        return payload

    @property
    def config_hash(self) -> str:
        """Hash of everything that affects results; the output location does not."""
        payload = self.to_dict()
        payload["run"].pop("output_dir", None)
        return config_hash(payload)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: Any, hint: Any, where: str) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if text == "" or text.lower() == "none":
            return None
        return _coerce(text, args[0], where)
    try:
        if origin is tuple:
            return tuple(int(part) for part in text.replace("x", ",").split(",") if part.strip())
        if hint is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if hint is int:
            number = float(text)
            if number != int(number):
                raise ValueError(text)
            return int(number)
        if hint is float:
            return float(text)
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read {text!r} as {getattr(hint, '__name__', hint)}") from None
    return text


def _apply(instance, section: str, values: Mapping[str, Any]):
    cls = type(instance)
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    changes = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigurationError(f"unknown key '{key}' in section [{section}]")
        changes[key] = _coerce(raw, hints[key], f"[{section}] {key}")
    return replace(instance, **changes) if changes else instance


def _parse_knob(name: str, raw: Any) -> Knob:
    if isinstance(raw, Knob):
        return raw
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] not in ("log", "uniform")):
        raise ConfigurationError(f"[search] {name}: expected 'low, high[, log|uniform]', got {raw!r}")
    try:
        low, high = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigurationError(f"[search] {name}: bounds must be numbers, got {raw!r}") from None
    return Knob(low, high, log=len(parts) == 3 and parts[2] == "log")


def _apply_search(settings: SearchSettings, values: Mapping[str, Any]) -> SearchSettings:
    changes: dict[str, Any] = {}
    knobs = dict(settings.knobs)
    hints = typing.get_type_hints(SearchSettings)
    for key, raw in values.items():
        if key in ("n_trials", "trial_budget"):
            changes[key] = _coerce(raw, hints[key], f"[search] {key}")
        else:
            knobs[key] = _parse_knob(key, raw)
    changes["knobs"] = knobs
    updated = replace(settings, **changes)
    updated.search_space()  # validates knob names
    return updated


def load_run_config(path: str | os.PathLike | None = None,
                    overrides: Mapping[str, Mapping[str, Any]] | None = None,
                    defaults: Mapping[str, Mapping[str, Any]] | None = None) -> RunConfig:
    """Resolve a RunConfig.

    Layers apply in order: dataclass defaults, `defaults` (process settings
    such as DEFAULT_REPLICATES), the INI file at `path`, then `overrides`
    (command-line flags).  `None` values in a layer are skipped.
    """
    layers: list[Mapping[str, Mapping[str, Any]]] = []
    if defaults:
        layers.append(defaults)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigurationError(f"config file not found: {os.fspath(path)}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse config file {os.fspath(path)}: {exc}") from exc
        layers.append({section: dict(parser.items(section)) for section in parser.sections()})
    if overrides:
        layers.append(overrides)

    sections = {
        "run": RunSettings(),
        "fishery": FisheryParams(),
        "conservation": ConservationParams(),
        "td3": Td3Hyperparams(),
        "experiment": ExperimentSettings(),
        "search": SearchSettings(),
    }
    for layer in layers:
        for section, values in layer.items():
            values = {k: v for k, v in values.items() if v is not None}
            if section not in sections:
                raise ConfigurationError(f"unknown config section [{section}]")
            if section == "search":
                sections[section] = _apply_search(sections[section], values)
            else:
                sections[section] = _apply(sections[section], section, values)
    return RunConfig(**sections)
