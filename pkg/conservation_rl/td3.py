"""
Twin Delayed Deep Deterministic policy gradient (TD3).

A deterministic actor and two critics with target copies, clipped double-Q
targets, target policy smoothing and delayed actor updates.  Networks see
observations and actions rescaled to [-1, 1] by their boxes; the actor's
squashed output lives directly in the action box.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np
import pandas as pd

from .decision_process import BoxSpace, EpisodicEnv, rollout, trajectory_return
from .errors import ConfigurationError, ShapeError, TrainingError
from .helpers import log_event, spawn_rngs
from .neural import AdamState, CriticValueLoss, Mlp, MseLoss, ReplayBuffer, Transition, adam_step, gradients

EVAL_SEED_OFFSET = 1_000_000

EnvFactory = Callable[[int], EpisodicEnv]


@dataclass(frozen=True)
class Td3Hyperparams:
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    tau: float = 0.005
    policy_delay: int = 2
    # Fraction of the action-box width.
    exploration_noise: float = 0.1
    # In normalized action units, i.e. fractions of the half-width.
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    batch_size: int = 128
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000
    total_env_steps: int = 100_000
    hidden_sizes: tuple[int, ...] = (64, 64)
    gamma: float = 0.99
    eval_interval: int = 5000
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ConfigurationError("learning rates must be positive")
        if not (0 < self.tau <= 1):
            raise ConfigurationError(f"tau must lie in (0, 1], got {self.tau}")
        if int(self.policy_delay) < 1:
            raise ConfigurationError(f"policy_delay must be >= 1, got {self.policy_delay}")
        if self.exploration_noise < 0 or self.target_noise < 0:
            raise ConfigurationError("noise scales must be non-negative")
        if not self.target_noise_clip > 0:
            raise ConfigurationError(f"target_noise_clip must be positive, got {self.target_noise_clip}")
        if int(self.batch_size) < 1 or int(self.buffer_capacity) < int(self.batch_size):
            raise ConfigurationError("batch_size must be >= 1 and no larger than buffer_capacity")
        if int(self.warmup_steps) < 0:
            raise ConfigurationError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if int(self.total_env_steps) < 1:
            raise ConfigurationError(f"total_env_steps must be >= 1, got {self.total_env_steps}")
        if not self.hidden_sizes or any(int(s) < 1 for s in self.hidden_sizes):
            raise ConfigurationError(f"hidden_sizes must be positive integers, got {self.hidden_sizes}")
        if not (0 < self.gamma <= 1):
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if int(self.eval_interval) < 1 or int(self.eval_episodes) < 1:
            raise ConfigurationError("eval_interval and eval_episodes must be >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes))

    def replace(self, **changes) -> "Td3Hyperparams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["hidden_sizes"] = list(self.hidden_sizes)
        return payload


def box_scaling(box: BoxSpace) -> tuple[np.ndarray, np.ndarray]:
    """(center, scale) with (x - center) * scale in [-1, 1]; zero-width axes scale by 0."""
    width = box.width
    scale = np.divide(2.0, width, out=np.zeros_like(width), where=width > 0)
    return box.low + width / 2.0, scale


@dataclass(frozen=True)
class ActorPolicy:
    """Frozen deterministic actor usable as a `Policy`."""

    actor: Mlp
    observation_box: BoxSpace
    action_box: BoxSpace

    def __post_init__(self):
        if self.actor.input_dim != self.observation_box.dim or self.actor.output_dim != self.action_box.dim:
            raise ShapeError(
                f"actor maps {self.actor.input_dim} -> {self.actor.output_dim}, environment needs "
                f"{self.observation_box.dim} -> {self.action_box.dim}"
            )

    def __call__(self, observation) -> np.ndarray:
        center, scale = box_scaling(self.observation_box)
        obs = self.observation_box.clip(np.asarray(observation, dtype=np.float64).reshape(-1))
        return self.action_box.clip(self.actor((obs - center) * scale))


def load_actor_policy(path: str | os.PathLike, env: EpisodicEnv) -> ActorPolicy:
    return ActorPolicy(Mlp.load(path), env.observation_box, env.action_box)


class Td3Agent:
    def __init__(
        self,
        observation_box: BoxSpace,
        action_box: BoxSpace,
        hyper: Td3Hyperparams | None = None,
        rng: np.random.Generator | None = None,
        buffer_capacity: int | None = None,
    ):
        self.hyper = hyper or Td3Hyperparams()
        self.observation_box = observation_box
        self.action_box = action_box
        rng = rng if rng is not None else np.random.default_rng(self.hyper.seed)
        obs_dim, act_dim = observation_box.dim, action_box.dim
        hidden = list(self.hyper.hidden_sizes)

        self.actor = Mlp([obs_dim, *hidden, act_dim], output="squash",
                         low=action_box.low, high=action_box.high, rng=rng)
        self.critic_1 = Mlp([obs_dim + act_dim, *hidden, 1], rng=rng)
        self.critic_2 = Mlp([obs_dim + act_dim, *hidden, 1], rng=rng)
        self.actor_target = self.actor.copy()
        self.critic_1_target = self.critic_1.copy()
        self.critic_2_target = self.critic_2.copy()

        self.actor_optim = AdamState.for_params(self.actor.parameters(), self.hyper.actor_lr)
        self.critic_1_optim = AdamState.for_params(self.critic_1.parameters(), self.hyper.critic_lr)
        self.critic_2_optim = AdamState.for_params(self.critic_2.parameters(), self.hyper.critic_lr)

        capacity = int(buffer_capacity or self.hyper.buffer_capacity)
        self.buffer = ReplayBuffer(capacity, obs_dim, act_dim)
        self.env_steps = 0
        self.updates = 0
        self._obs_center, self._obs_scale = box_scaling(observation_box)
        self._act_center, self._act_scale = box_scaling(action_box)

    def normalize_observation(self, obs) -> np.ndarray:
        return (np.asarray(obs, dtype=np.float64) - self._obs_center) * self._obs_scale

    def normalize_action(self, action) -> np.ndarray:
        return (np.asarray(action, dtype=np.float64) - self._act_center) * self._act_scale

    def act(self, obs) -> np.ndarray:
        obs = self.observation_box.clip(np.asarray(obs, dtype=np.float64).reshape(-1))
        return self.action_box.clip(self.actor(self.normalize_observation(obs)))

    def select_action(self, obs, explore: bool, rng: np.random.Generator) -> np.ndarray:
        """Actor action, uniform during warmup and Gaussian-perturbed when exploring."""
        if explore and self.env_steps < self.hyper.warmup_steps:
            return self.action_box.sample(rng)
        action = self.act(obs)
        if explore and self.hyper.exploration_noise > 0:
            sd = self.hyper.exploration_noise * self.action_box.width
            action = self.action_box.clip(action + sd * rng.standard_normal(action.shape))
        return action

    def record(self, obs, action, reward: float, next_obs, done: bool) -> None:
        self.buffer.push(Transition(
            observation=np.asarray(obs, dtype=np.float64),
            action=np.asarray(action, dtype=np.float64),
            reward=float(reward),
            next_observation=np.asarray(next_obs, dtype=np.float64),
            done=bool(done),
        ))
        self.env_steps += 1

    def target_values(self, batch, rng: np.random.Generator):
        """Clipped double-Q targets y = r + gamma (1 - done) min(Q1', Q2').

        Returns (y, q1_target, q2_target).
        """
        h = self.hyper
        next_obs = self.normalize_observation(batch.next_observations)
        next_action = self.normalize_action(self.actor_target(next_obs))
        noise = np.clip(h.target_noise * rng.standard_normal(next_action.shape),
                        -h.target_noise_clip, h.target_noise_clip)
        # Zero-width action axes stay at their single admissible value.
        noise *= self._act_scale > 0
        next_action = np.clip(next_action + noise, -1.0, 1.0)
        critic_in = np.hstack([next_obs, next_action])
        q1 = self.critic_1_target(critic_in)[:, 0]
        q2 = self.critic_2_target(critic_in)[:, 0]
        not_done = 1.0 - batch.dones
        bootstrap = np.where(not_done > 0, np.minimum(q1, q2), 0.0)
        y = batch.rewards + h.gamma * not_done * bootstrap
        return y, q1, q2

    def update(self, rng: np.random.Generator) -> dict:
        """One TD3 gradient step; the actor and targets move every `policy_delay` calls."""
        h = self.hyper
        batch = self.buffer.sample(h.batch_size, rng)
        y, _, _ = self.target_values(batch, rng)
        critic_in = np.hstack([self.normalize_observation(batch.observations), self.normalize_action(batch.actions)])

        critic_losses = []
        for critic, optim in ((self.critic_1, self.critic_1_optim), (self.critic_2, self.critic_2_optim)):
            result = gradients(critic, MseLoss(y[:, None]), critic_in)
            adam_step(critic.parameters(), result.grads, optim)
            critic_losses.append(result.loss)

        self.updates += 1
        diagnostics = {"critic_loss": float(np.mean(critic_losses)), "actor_loss": None, "update": self.updates}
        if self.updates % h.policy_delay == 0:
            obs = self.normalize_observation(batch.observations)
            loss = CriticValueLoss(self.critic_1, obs, self._act_center, self._act_scale)
            result = gradients(self.actor, loss, obs)
            adam_step(self.actor.parameters(), result.grads, self.actor_optim)
            diagnostics["actor_loss"] = result.loss
            self.soft_update()
        return diagnostics

    def soft_update(self, tau: float | None = None) -> None:
        tau = self.hyper.tau if tau is None else tau
        self.actor_target.soft_update_from(self.actor, tau)
        self.critic_1_target.soft_update_from(self.critic_1, tau)
        self.critic_2_target.soft_update_from(self.critic_2, tau)

    def policy(self) -> ActorPolicy:
        return ActorPolicy(self.actor.copy(), self.observation_box, self.action_box)

    def save(self, directory: str | os.PathLike) -> None:
        os.makedirs(directory, exist_ok=True)
        self.actor.save(os.path.join(directory, "actor.npz"))
        self.critic_1.save(os.path.join(directory, "critic_1.npz"))
        self.critic_2.save(os.path.join(directory, "critic_2.npz"))

    @classmethod
    def load(cls, directory: str | os.PathLike, observation_box: BoxSpace, action_box: BoxSpace,
             hyper: Td3Hyperparams | None = None) -> "Td3Agent":
        hyper = hyper or Td3Hyperparams()
        # Loaded agents are used for inference; the replay buffer starts empty.
        agent = cls(observation_box, action_box, hyper, buffer_capacity=hyper.batch_size)
        for name in ("actor", "critic_1", "critic_2"):
            loaded = Mlp.load(os.path.join(directory, f"{name}.npz"))
            getattr(agent, name).set_parameters(loaded.parameters())
            getattr(agent, f"{name}_target").set_parameters(loaded.parameters())
        return agent


@dataclass
class TrainingResult:
    agent: Td3Agent
    curve: pd.DataFrame

    @property
    def final_return(self) -> float:
        return float(self.curve["eval_return_mean"].iloc[-1])


CURVE_COLUMNS = ["env_step", "eval_return_mean", "eval_return_sd"]


def evaluate_returns(env_factory: EnvFactory, policy, episodes: int, seed: int) -> np.ndarray:
    """Undiscounted-by-default episode returns of a frozen policy on fresh environments."""
    returns = np.empty(episodes)
    for i in range(episodes):
        episode_seed = seed + EVAL_SEED_OFFSET + i
        env = env_factory(episode_seed)
        returns[i] = trajectory_return(rollout(env, policy, seed=episode_seed), env.gamma)
    return returns


def train(env_factory: EnvFactory, hyper: Td3Hyperparams | None = None) -> TrainingResult:
    """Train a TD3 agent for `total_env_steps` interactions.

    `env_factory(seed)` builds an environment; training episodes reset with
    seed + episode index, evaluations use separate environments seeded from
    seed + 1_000_000 so the training noise stream is untouched.
    """
    hyper = hyper or Td3Hyperparams()
    env = env_factory(hyper.seed)
    init_rng, explore_rng, update_rng = spawn_rngs(hyper.seed, 3)
    agent = Td3Agent(
        env.observation_box, env.action_box, hyper, rng=init_rng,
        buffer_capacity=min(hyper.buffer_capacity, hyper.total_env_steps),
    )
    rows: list[dict] = []
    episode = 0
    obs, _ = env.reset(seed=hyper.seed)
    log_event("training_started", total_env_steps=hyper.total_env_steps, seed=hyper.seed)
    try:
        for step in range(1, hyper.total_env_steps + 1):
            action = agent.select_action(obs, explore=True, rng=explore_rng)
            result = env.transition(action)
            agent.record(obs, action, result.reward, result.observation, done=result.terminal)
            obs = result.observation
            if result.terminal:
                episode += 1
                obs, _ = env.reset(seed=hyper.seed + episode)

            if agent.env_steps >= hyper.warmup_steps and len(agent.buffer) >= hyper.batch_size:
                agent.update(update_rng)

            if step % hyper.eval_interval == 0 or step == hyper.total_env_steps:
                returns = evaluate_returns(env_factory, agent.policy(), hyper.eval_episodes, hyper.seed)
                sd = float(returns.std(ddof=1)) if returns.size > 1 else 0.0
                rows.append({"env_step": step, "eval_return_mean": float(returns.mean()), "eval_return_sd": sd})
                log_event("training_progress", env_step=step, eval_return_mean=rows[-1]["eval_return_mean"],
                          eval_return_sd=sd, updates=agent.updates)
    except TrainingError as exc:
        exc.curve = pd.DataFrame(rows, columns=CURVE_COLUMNS)
        log_event("training_failed", env_step=agent.env_steps, error=str(exc), **exc.diagnostics)
        raise
    return TrainingResult(agent=agent, curve=pd.DataFrame(rows, columns=CURVE_COLUMNS))
