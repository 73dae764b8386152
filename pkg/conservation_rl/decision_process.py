"""
Episodic decision-process layer.

Defines the box spaces, the step/reset contract every environment in the
package follows, trajectories, and discounted returns.  Environments are
gymnasium `Env` subclasses, so they also work with anything that speaks the
gymnasium API; the package itself drives them through `transition()` and
`rollout()`.

Observations are fully observed (o_t = s_t).  `EpisodicEnv.emit` is the
emission hook should partial observability ever be needed.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import gymnasium as gym
import numpy as np
import pandas as pd

from .errors import ConfigurationError, ShapeError, SimulationError


@dataclass(frozen=True)
class BoxSpace:
    """Axis-aligned box of real vectors."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        if low.ndim != 1 or high.ndim != 1 or low.shape != high.shape:
            raise ShapeError(f"box bounds must be vectors of equal length, got {low.shape} and {high.shape}")
        if low.size < 1:
            raise ShapeError("box must have at least one dimension")
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise ConfigurationError("box bounds must be finite")
        if np.any(low > high):
            raise ConfigurationError(f"box lower bound exceeds upper bound: {low} > {high}")
        low.setflags(write=False)
        high.setflags(write=False)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def interval(cls, low: float, high: float) -> "BoxSpace":
        return cls(np.array([low]), np.array([high]))

    @property
    def dim(self) -> int:
        return int(self.low.size)

    @property
    def width(self) -> np.ndarray:
        return self.high - self.low

    def contains(self, x: Sequence[float] | np.ndarray) -> bool:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return x.size == self.dim and bool(np.all(x >= self.low) and np.all(x <= self.high))

    def clip(self, a: Sequence[float] | np.ndarray) -> np.ndarray:
        return clip_to_space(a, self)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high)

    def to_gym(self) -> gym.spaces.Box:
        return gym.spaces.Box(low=self.low.copy(), high=self.high.copy(), dtype=np.float64)


def clip_to_space(a: Sequence[float] | np.ndarray, space: BoxSpace) -> np.ndarray:
    """Componentwise clamp of `a` into `space`; idempotent."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.shape[-1] != space.dim:
        raise ShapeError(f"expected a vector of length {space.dim}, got shape {a.shape}")
    return np.minimum(np.maximum(a, space.low), space.high)


@dataclass(frozen=True)
class StepResult:
    """Outcome of one environment transition.

    `terminal` marks the end of the episode.  `truncated` additionally says
    the episode ended only because the horizon ran out; the gymnasium
    adapter reports it separately.
    """

    observation: np.ndarray
    reward: float
    terminal: bool
    truncated: bool = False
    info: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 100
    gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if not (0.0 < float(self.gamma) <= 1.0):
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class Trajectory:
    """Observations o_0..o_H, actions a_0..a_{H-1} and rewards r_0..r_{H-1}."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        acts = np.asarray(self.actions, dtype=np.float64)
        rews = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        if obs.ndim == 1:
            obs = obs.reshape(-1, 1)
        if acts.ndim == 1:
            acts = acts.reshape(-1, 1)
        if obs.shape[0] != rews.size + 1 or acts.shape[0] != rews.size:
            raise ShapeError(
                f"trajectory needs H+1 observations and H actions/rewards, got "
                f"{obs.shape[0]} observations, {acts.shape[0]} actions, {rews.size} rewards"
            )
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "rewards", rews)

    @property
    def horizon(self) -> int:
        return int(self.rewards.size)

    def to_frame(self) -> pd.DataFrame:
        """Columns t, obs_0..obs_k, act_0..act_m, reward; the final row has no action."""
        n_rows = self.observations.shape[0]
        frame = pd.DataFrame({"t": np.arange(n_rows)})
        for j in range(self.observations.shape[1]):
            frame[f"obs_{j}"] = self.observations[:, j]
        padded_actions = np.full((n_rows, self.actions.shape[1]), np.nan)
        padded_actions[: self.horizon] = self.actions
        for j in range(self.actions.shape[1]):
            frame[f"act_{j}"] = padded_actions[:, j]
        rewards = np.full(n_rows, np.nan)
        rewards[: self.horizon] = self.rewards
        frame["reward"] = rewards
        return frame


class Policy(Protocol):
    """Maps an observation vector to an action vector."""

    def __call__(self, observation: np.ndarray) -> np.ndarray: ...


class EpisodicEnv(gym.Env, ABC):
    """Finite-horizon environment with box observation and action spaces.

    Subclasses supply `_initial_state`, `_dynamics` and `_observe`.  The
    noise stream comes from gymnasium's `np_random`, which `reset(seed=...)`
    re-seeds, so equal seeds and equal actions give identical episodes.
    """

    metadata = {"render_modes": []}

    def __init__(self, config: EnvConfig, observation_box: BoxSpace, action_box: BoxSpace):
        super().__init__()
        self.config = config
        self.observation_box = observation_box
        self.action_box = action_box
        self.observation_space = observation_box.to_gym()
        self.action_space = action_box.to_gym()
        self.t = 0
        self._state: Any = None

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def gamma(self) -> float:
        return self.config.gamma

    @property
    def state(self) -> Any:
        return self._state

    @abstractmethod
    def _initial_state(self) -> Any:
        """Fresh state at t = 0."""

    @abstractmethod
    def _dynamics(self, state: Any, action: np.ndarray) -> tuple[Any, float, dict[str, Any]]:
        """Advance `state` under an in-box action; return (next_state, reward, info)."""

    @abstractmethod
    def _observe(self, state: Any) -> np.ndarray:
        """Observation vector of a state."""

    def emit(self, state: Any) -> np.ndarray:
        """Emission hook, currently the identity on the observed state."""
        return clip_to_space(self._observe(state), self.observation_box)

    def reset(self, *, seed: int | None = None, options: dict | None = None):
        if seed is None and self._np_random is None:
            seed = self.config.seed
        super().reset(seed=seed)
        self.t = 0
        self._state = self._initial_state()
        return self.emit(self._state), {"t": 0}

    def transition(self, action: Sequence[float] | np.ndarray) -> StepResult:
        if self._state is None:
            raise SimulationError("environment must be reset before stepping", step=self.t)
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(action)):
            raise SimulationError(f"non-finite action {action.tolist()} at step {self.t}", step=self.t)
        action = clip_to_space(action, self.action_box)
        next_state, reward, info = self._dynamics(self._state, action)
        self._state = next_state
        self.t += 1
        terminal = self.t >= self.horizon
        info = {"t": self.t, **info}
        return StepResult(
            observation=self.emit(next_state),
            reward=float(reward),
            terminal=terminal,
            truncated=terminal,
            info=info,
        )

    def step(self, action):
        result = self.transition(action)
        terminated = result.terminal and not result.truncated
        return result.observation, result.reward, terminated, result.truncated, result.info


def rollout(env: EpisodicEnv, policy: Policy, seed: int) -> Trajectory:
    """Reset `env` with `seed` and run `policy` for one episode."""
    obs, _ = env.reset(seed=seed)
    observations = [obs]
    actions: list[np.ndarray] = []
    rewards: list[float] = []
    for t in range(env.horizon):
        action = np.asarray(policy(obs), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(action)):
            raise SimulationError(f"policy returned non-finite action {action.tolist()} at step {t}", step=t)
        action = clip_to_space(action, env.action_box)
        result = env.transition(action)
        obs = result.observation
        observations.append(obs)
        actions.append(action)
        rewards.append(result.reward)
        if result.terminal:
            break
    return Trajectory(
        observations=np.vstack(observations),
        actions=np.vstack(actions) if actions else np.empty((0, env.action_box.dim)),
        rewards=np.asarray(rewards, dtype=np.float64),
    )


def discounted_return(rewards: Sequence[float] | np.ndarray, gamma: float) -> float:
    """Sum of gamma**t * r_t over a reward sequence."""
    if not (0.0 < float(gamma) <= 1.0):
        raise ConfigurationError(f"gamma must lie in (0, 1], got {gamma}")
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if rewards.size == 0:
        return 0.0
    discounts = float(gamma) ** np.arange(rewards.size)
    return float(np.dot(discounts, rewards))


def trajectory_return(traj: Trajectory, gamma: float) -> float:
    return discounted_return(traj.rewards, gamma)
