"""
Stochastic fishery harvest environment.

Logistic stock growth with lognormal recruitment noise and an absolute quota
action.  Each year the manager observes the biomass X and sets a quota; the
realized harvest is capped by the stock, the escapement regrows, and the
recruitment shock multiplies the result:

    h  = min(quota, X)
    S  = X - h
    X' = clip((S + r S (1 - S/K)) * Z, 0, 2K),   log Z ~ N(0, sigma^2)

The reward is the realized harvest.  Extinction is absorbing but episodes
always run to the horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .decision_process import BoxSpace, EnvConfig, EpisodicEnv
from .errors import ConfigurationError


@dataclass(frozen=True)
class FisheryParams:
    """Growth, noise and episode parameters; K=1 puts B_MSY at 0.5."""

    r: float = 0.3
    K: float = 1.0
    sigma: float = 0.1
    x0: float = 0.75
    horizon: int = 100
    gamma: float = 1.0

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigurationError(f"fishery r must be positive, got {self.r}")
        if not self.K > 0:
            raise ConfigurationError(f"fishery K must be positive, got {self.K}")
        if not self.sigma >= 0:
            raise ConfigurationError(f"fishery sigma must be non-negative, got {self.sigma}")
        if not (0 <= self.x0 <= 2 * self.K):
            raise ConfigurationError(f"fishery x0 must lie in [0, 2K], got {self.x0}")
        if int(self.horizon) < 1:
            raise ConfigurationError(f"fishery horizon must be >= 1, got {self.horizon}")
        if not (0 < self.gamma <= 1):
            raise ConfigurationError(f"fishery gamma must lie in (0, 1], got {self.gamma}")

    @property
    def b_msy(self) -> float:
        return self.K / 2

    @property
    def msy(self) -> float:
        return self.r * self.K / 4

    @property
    def max_biomass(self) -> float:
        return 2 * self.K

    def replace(self, **changes) -> "FisheryParams":
        return replace(self, **changes)

    def env_config(self, seed: int = 0) -> EnvConfig:
        return EnvConfig(horizon=int(self.horizon), gamma=float(self.gamma), seed=int(seed))


@dataclass(frozen=True)
class FisheryState:
    X: float
    t: int = 0


def logistic_growth(escapement, params: FisheryParams):
    """S + r S (1 - S/K), vectorized over numpy arrays."""
    S = np.asarray(escapement, dtype=np.float64)
    return S + params.r * S * (1.0 - S / params.K)


def recruitment_noise(rng: np.random.Generator, sigma: float, size=None):
    """Median-one lognormal factors; sigma=0 gives exactly 1."""
    return np.exp(sigma * rng.standard_normal(size))


class FisheryEnv(EpisodicEnv):
    """Single-stock harvest environment; observation [X], action [quota]."""

    def __init__(self, params: FisheryParams | None = None, seed: int = 0):
        self.params = params or FisheryParams()
        box = BoxSpace.interval(0.0, self.params.max_biomass)
        super().__init__(self.params.env_config(seed), observation_box=box, action_box=box)

    def _initial_state(self) -> FisheryState:
        return FisheryState(X=float(self.params.x0), t=0)

    def _dynamics(self, state: FisheryState, action: np.ndarray):
        p = self.params
        quota = float(action[0])
        harvest = min(quota, state.X)
        escapement = state.X - harvest
        grown = float(logistic_growth(escapement, p))
        # Always draw, so the noise stream does not depend on the policy.
        shock = float(recruitment_noise(self.np_random, p.sigma))
        biomass = min(max(grown * shock, 0.0), p.max_biomass)
        info = {"harvest": harvest, "escapement": escapement, "biomass": biomass}
        return FisheryState(X=biomass, t=state.t + 1), harvest, info

    def _observe(self, state: FisheryState) -> np.ndarray:
        return np.array([state.X], dtype=np.float64)


def make_fishery_env(params: FisheryParams | None = None, seed: int = 0) -> FisheryEnv:
    return FisheryEnv(params, seed=seed)
