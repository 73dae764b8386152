"""
Small numpy neural-network toolkit used by the TD3 agent.

Multilayer perceptrons with hand-written reverse-mode gradients, the Adam
optimizer and a ring-buffer experience replay.  Everything is float64.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import BufferUnderflowError, ConfigurationError, ShapeError, TrainingError
from .helpers import atomic_write

SNAPSHOT_FORMAT = "conservation_rl.mlp/1"

HIDDEN_ACTIVATIONS = ("softplus", "tanh", "relu", "identity")
OUTPUT_ACTIVATIONS = ("identity", "squash")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "softplus":
        return np.logaddexp(0.0, z)
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_slope(name: str, z: np.ndarray) -> np.ndarray:
    if name == "softplus":
        return expit(z)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    squeeze: bool


class Mlp:
    """Fully connected network.

    Weights are stored as (fan_in, fan_out) matrices.  With output="squash"
    the last layer is mapped into [low, high] by low + (tanh(z) + 1)/2 * (high - low).
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        hidden: str = "softplus",
        output: str = "identity",
        low: Sequence[float] | np.ndarray | None = None,
        high: Sequence[float] | np.ndarray | None = None,
        rng: np.random.Generator | None = None,
    ):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigurationError(f"layer sizes must be >= 2 positive integers, got {list(layer_sizes)}")
        if hidden not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"unknown hidden activation {hidden!r}")
        if output not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {output!r}")
        self.layer_sizes = sizes
        self.hidden = hidden
        self.output = output
        if output == "squash":
            if low is None or high is None:
                raise ConfigurationError("squash output needs low and high bounds")
            self.low = np.broadcast_to(np.asarray(low, dtype=np.float64), (sizes[-1],)).copy()
            self.high = np.broadcast_to(np.asarray(high, dtype=np.float64), (sizes[-1],)).copy()
            if np.any(self.low > self.high):
                raise ConfigurationError("squash bounds must satisfy low <= high")
        else:
            self.low = self.high = None

        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """[W0, b0, W1, b1, ...]; the arrays are live views of the network."""
        params: list[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            params.extend([W, b])
        return params

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        own = self.parameters()
        if len(params) != len(own):
            raise ShapeError(f"expected {len(own)} parameter arrays, got {len(params)}")
        for target, source in zip(own, params):
            source = np.asarray(source, dtype=np.float64)
            if target.shape != source.shape:
                raise ShapeError(f"parameter shape mismatch: {target.shape} vs {source.shape}")
            np.copyto(target, source)

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_sizes = list(self.layer_sizes)
        clone.hidden = self.hidden
        clone.output = self.output
        clone.low = None if self.low is None else self.low.copy()
        clone.high = None if self.high is None else self.high.copy()
        clone.weights = [W.copy() for W in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def soft_update_from(self, source: "Mlp", tau: float) -> None:
        """Polyak step: theta <- tau * theta_source + (1 - tau) * theta."""
        if not (0 < tau <= 1):
            raise ConfigurationError(f"tau must lie in (0, 1], got {tau}")
        for target, online in zip(self.parameters(), source.parameters()):
            if target.shape != online.shape:
                raise ShapeError(f"parameter shape mismatch: {target.shape} vs {online.shape}")
            if tau == 1.0:
                np.copyto(target, online)
            else:
                target *= 1.0 - tau
                target += tau * online

    def distance_to(self, other: "Mlp") -> float:
        """Euclidean distance between flattened parameter vectors."""
        return float(np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(self.parameters(), other.parameters()))))

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"network expects inputs of width {self.input_dim}, got shape {x.shape}")
        return x, squeeze

    def forward_cache(self, x) -> tuple[np.ndarray, ForwardCache]:
        a, squeeze = self._as_batch(x)
        inputs, pre = [], []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ W + b
            pre.append(z)
            if i < self.n_layers - 1:
                a = _activate(self.hidden, z)
            elif self.output == "squash":
                a = self.low + (np.tanh(z) + 1.0) * 0.5 * (self.high - self.low)
            else:
                a = z
        out = a[0] if squeeze else a
        return out, ForwardCache(inputs=inputs, pre_activations=pre, squeeze=squeeze)

    def forward(self, x) -> np.ndarray:
        return self.forward_cache(x)[0]

    __call__ = forward

    def backward(self, cache: ForwardCache, grad_output) -> tuple[list[np.ndarray], np.ndarray]:
        """Back-propagate dL/d(output).

        Returns gradients aligned with `parameters()` and dL/d(input).
        """
        delta = np.asarray(grad_output, dtype=np.float64)
        if cache.squeeze:
            delta = delta[None, :]
        grads: list[np.ndarray] = [None] * (2 * self.n_layers)  # type: ignore[list-item]
        for i in reversed(range(self.n_layers)):
            z = cache.pre_activations[i]
            if i == self.n_layers - 1:
                if self.output == "squash":
                    delta = delta * (1.0 - np.tanh(z) ** 2) * 0.5 * (self.high - self.low)
            else:
                delta = delta * _activation_slope(self.hidden, z)
            grads[2 * i] = cache.inputs[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        grad_input = delta[0] if cache.squeeze else delta
        return grads, grad_input

    def save(self, path: str | os.PathLike) -> None:
        arrays = {
            "format": np.array(SNAPSHOT_FORMAT),
            "layer_sizes": np.asarray(self.layer_sizes, dtype=np.int64),
            "hidden": np.array(self.hidden),
            "output": np.array(self.output),
        }
        if self.output == "squash":
            arrays["low"] = self.low
            arrays["high"] = self.high
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W__{i}"] = W
            arrays[f"b__{i}"] = b
        with atomic_write(path, "wb") as handle:
            np.savez(handle, **arrays)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Mlp":
        with np.load(path, allow_pickle=False) as data:
            fmt = str(data["format"])
            if fmt != SNAPSHOT_FORMAT:
                raise ConfigurationError(f"unsupported snapshot format {fmt!r} in {path}")
            sizes = [int(s) for s in data["layer_sizes"]]
            output = str(data["output"])
            net = cls(
                sizes,
                hidden=str(data["hidden"]),
                output=output,
                low=data["low"] if output == "squash" else None,
                high=data["high"] if output == "squash" else None,
            )
            net.set_parameters(
                [data[f"{kind}__{i}"] for i in range(len(sizes) - 1) for kind in ("W", "b")]
            )
        return net


@dataclass(frozen=True)
class MseLoss:
    """mean((net(x) - targets)^2) over all batch entries."""

    targets: np.ndarray


@dataclass(frozen=True)
class CriticValueLoss:
    """-mean(critic([critic_obs, (net(x) - action_offset) * action_scale])).

    The actor objective: ascend the critic's value of the actor's actions.
    """

    critic: Mlp
    critic_obs: np.ndarray
    action_offset: np.ndarray
    action_scale: np.ndarray


@dataclass(frozen=True)
class GradientResult:
    loss: float
    grads: list[np.ndarray]


def _diagnostics(mlp: Mlp, inputs: np.ndarray, outputs: np.ndarray) -> dict:
    return {
        "batch_size": int(inputs.shape[0]) if inputs.ndim > 1 else 1,
        "max_abs_input": float(np.max(np.abs(inputs))) if inputs.size else 0.0,
        "max_abs_output": float(np.nanmax(np.abs(outputs))) if np.any(np.isfinite(outputs)) else float("nan"),
        "max_abs_parameter": float(max(np.max(np.abs(p)) for p in mlp.parameters())),
    }


def gradients(mlp: Mlp, loss_spec: MseLoss | CriticValueLoss, inputs, scale: float = 1.0) -> GradientResult:
    """Loss value and its gradient w.r.t. every parameter of `mlp`, times `scale`."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.shape[0] == 0:
        raise ShapeError("gradient batch must not be empty")
    outputs, cache = mlp.forward_cache(inputs)
    batch = outputs.shape[0]

    if isinstance(loss_spec, MseLoss):
        targets = np.asarray(loss_spec.targets, dtype=np.float64).reshape(outputs.shape)
        error = outputs - targets
        loss = float(np.mean(error**2))
        grad_output = 2.0 * error / error.size
    elif isinstance(loss_spec, CriticValueLoss):
        scaled = (outputs - loss_spec.action_offset) * loss_spec.action_scale
        critic_in = np.hstack([np.asarray(loss_spec.critic_obs, dtype=np.float64).reshape(batch, -1), scaled])
        q, critic_cache = loss_spec.critic.forward_cache(critic_in)
        loss = float(-np.mean(q))
        _, grad_critic_in = loss_spec.critic.backward(critic_cache, np.full_like(q, -1.0 / q.size))
        grad_output = grad_critic_in[:, -outputs.shape[1]:] * loss_spec.action_scale
    else:
        raise ConfigurationError(f"unsupported loss specification {type(loss_spec).__name__}")

    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss}",
            diagnostics={"loss": loss, **_diagnostics(mlp, inputs, outputs)},
        )
    grads, _ = mlp.backward(cache, grad_output * scale)
    return GradientResult(loss=loss * scale, grads=grads)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float, **kwargs) -> "AdamState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[Sequence[np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied to `params` in place."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError(
            f"Adam expects matching parameter/gradient/moment counts, got "
            f"{len(params)}, {len(grads)}, {len(state.m)}, {len(state.v)}"
        )
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ShapeError(f"Adam shape mismatch: parameter {p.shape}, gradient {np.shape(g)}, moment {m.shape}")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray
    done: bool


@dataclass(frozen=True)
class Batch:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    dones: np.ndarray
    indices: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if int(capacity) < 1:
            raise ConfigurationError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.observations = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, act_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_observations = np.zeros((self.capacity, obs_dim))
        self.dones = np.zeros(self.capacity)
        self._idx = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> None:
        i = self._idx
        self.observations[i] = transition.observation
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_observations[i] = transition.next_observation
        self.dones[i] = float(transition.done)
        self._idx = (self._idx + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size < 1:
            raise ConfigurationError(f"batch size must be positive, got {batch_size}")
        if self.size < batch_size:
            raise BufferUnderflowError(f"replay buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(
            observations=self.observations[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_observations=self.next_observations[idx],
            dones=self.dones[idx],
            indices=idx,
        )

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self._idx if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [
            Transition(
                observation=self.observations[i].copy(),
                action=self.actions[i].copy(),
                reward=float(self.rewards[i]),
                next_observation=self.next_observations[i].copy(),
                done=bool(self.dones[i]),
            )
            for i in order
        ]
