"""
Classical baselines.

Constant escapement for the fishery, stochastic dynamic programming on a
discretized fishery, and the steady-state rule of thumb for the
conservation problem.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, stats

from .errors import ConfigurationError, ConvergenceError, ShapeError
from .fishery import FisheryParams, logistic_growth
from .helpers import log_event


@dataclass(frozen=True)
class EscapementPolicy:
    """Harvest everything above S_star: quota = max(X - S_star, 0)."""

    S_star: float

    def __post_init__(self):
        if not (np.isfinite(self.S_star) and self.S_star >= 0):
            raise ConfigurationError(f"escapement threshold must be >= 0, got {self.S_star}")

    def __call__(self, observation) -> np.ndarray:
        X = float(np.asarray(observation, dtype=np.float64).reshape(-1)[0])
        return np.array([max(X - self.S_star, 0.0)])


def escapement_policy(S_star: float, K: float | None = None) -> EscapementPolicy:
    if K is not None and S_star > K:
        raise ConfigurationError(f"escapement threshold {S_star} exceeds carrying capacity {K}")
    return EscapementPolicy(float(S_star))


def discounted_escapement(params: FisheryParams, gamma: float) -> float:
    """Deterministic optimal escapement under discounting.

    Solves g'(S) = 1/gamma for logistic growth g; gamma = 1 gives K/2.
    """
    if not (0 < gamma <= 1):
        raise ConfigurationError(f"gamma must lie in (0, 1], got {gamma}")
    return max(params.K / 2 * (1.0 - (1.0 / gamma - 1.0) / params.r), 0.0)


@dataclass(frozen=True)
class SteadyStatePolicy:
    """Constant action alpha, exactly offsetting the per-step degradation."""

    alpha: float

    def __call__(self, observation) -> np.ndarray:
        return np.array([self.alpha])


def steady_state_policy(alpha: float) -> SteadyStatePolicy:
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    return SteadyStatePolicy(float(alpha))


@dataclass(frozen=True)
class DiscreteMdp:
    """Finite MDP with transitions stored as a CSR matrix.

    Row `s * M + a` of `transitions` is the distribution of the next state
    index after action index `a` in state index `s`.
    """

    states: np.ndarray
    actions: np.ndarray
    transitions: sparse.csr_matrix
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        N, M = self.states.size, self.actions.size
        if N < 2 or M < 2:
            raise ConfigurationError(f"grids need at least 2 points, got N={N}, M={M}")
        if self.transitions.shape != (N * M, N):
            raise ShapeError(f"transition matrix must be ({N * M}, {N}), got {self.transitions.shape}")
        if self.rewards.shape != (N, M):
            raise ShapeError(f"reward matrix must be ({N}, {M}), got {self.rewards.shape}")
        if not (0 < self.gamma <= 1):
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        sums = np.asarray(self.transitions.sum(axis=1)).ravel()
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > 1e-9:
            raise ConfigurationError(f"transition rows must sum to 1, worst deviation {worst:.3g}")

    @classmethod
    def from_dense(cls, states, actions, transitions, rewards, gamma: float) -> "DiscreteMdp":
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        dense = np.asarray(transitions, dtype=np.float64)
        N, M = states.size, actions.size
        if dense.shape != (N, M, N):
            raise ShapeError(f"transition tensor must be ({N}, {M}, {N}), got {dense.shape}")
        return cls(
            states=states,
            actions=actions,
            transitions=sparse.csr_matrix(dense.reshape(N * M, N)),
            rewards=np.asarray(rewards, dtype=np.float64),
            gamma=float(gamma),
        )

    @property
    def n_states(self) -> int:
        return int(self.states.size)

    @property
    def n_actions(self) -> int:
        return int(self.actions.size)

    def transition_tensor(self) -> np.ndarray:
        return self.transitions.toarray().reshape(self.n_states, self.n_actions, self.n_states)

    def backup(self, values: np.ndarray) -> np.ndarray:
        """Bellman operand R + gamma T V, shape (N, M)."""
        expected = (self.transitions @ values).reshape(self.n_states, self.n_actions)
        return self.rewards + self.gamma * expected


KERNELS = ("nearest", "linear")


def _bin_edges(grid: np.ndarray) -> np.ndarray:
    """Midpoints between neighbouring grid states; bin j is [edge j-1, edge j)."""
    return 0.5 * (grid[:-1] + grid[1:])


def _nearest_bins(destinations: np.ndarray, grid: np.ndarray) -> np.ndarray:
    # Midpoint ties go to the upper state; everything beyond the grid lands in an edge bin.
    return np.searchsorted(_bin_edges(grid), destinations, side="right")


def _split_linear(destinations: np.ndarray, grid: np.ndarray):
    """Split each destination between its two bracketing grid states.

    Returns (column indices, probabilities) with a trailing axis of 2.
    """
    lo, hi = grid[0], grid[-1]
    spacing = (hi - lo) / (grid.size - 1)
    position = (np.clip(destinations, lo, hi) - lo) / spacing
    left = np.clip(np.floor(position).astype(np.int64), 0, grid.size - 2)
    frac = np.clip(position - left, 0.0, 1.0)
    return np.stack([left, left + 1], axis=-1), np.stack([1.0 - frac, frac], axis=-1)


def _lognormal_bins(grown: np.ndarray, sigma: float, grid: np.ndarray, tail_sds: float,
                    chunk_entries: int = 2_000_000):
    """CDF differences of grown * Z over the state bins, log Z ~ N(0, sigma^2).

    Each row only evaluates bins inside grown * exp(+-tail_sds * sigma); the
    mass outside that window falls into its end bins, so rows telescope to 1
    and mass beyond the grid accumulates in the edge bins.
    Returns flat (rows, cols, probs).
    """
    edges = _bin_edges(grid)
    spread = np.exp(tail_sds * sigma)
    lo = np.searchsorted(edges, grown / spread, side="right")
    hi = np.searchsorted(edges, grown * spread, side="right")
    width = int((hi - lo).max()) + 1
    offsets = np.arange(width)
    safe = np.where(grown > 0, grown, 1.0)
    step = max(1, chunk_entries // width)

    rows, cols, probs = [], [], []
    for start in range(0, grown.size, step):
        block = slice(start, start + step)
        last = hi[block, None]
        col = np.minimum(lo[block, None] + offsets, last)
        valid = (lo[block, None] + offsets) <= last
        upper = stats.norm.cdf(np.log(edges[np.minimum(col, edges.size - 1)] / safe[block, None]) / sigma)
        upper = np.where(col >= last, 1.0, upper)
        lower = np.concatenate([np.zeros((upper.shape[0], 1)), upper[:, :-1]], axis=1)
        row = np.broadcast_to(np.arange(start, start + upper.shape[0])[:, None], col.shape)
        rows.append(row[valid])
        cols.append(col[valid])
        probs.append((upper - lower)[valid])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(probs)


def discretize_fishery(
    params: FisheryParams,
    n_states: int = 400,
    n_actions: int = 400,
    gamma: float = 0.99,
    kernel: str = "nearest",
    tail_sds: float = 6.0,
) -> DiscreteMdp:
    """Discretize the fishery on uniform grids over [0, 2K].

    With noise, the lognormal recruitment kernel is integrated over the bins
    around each grid state by CDF differences. Without noise the next state
    goes to the nearest grid state, or with kernel="linear" is split between
    its two bracketing states so that the expected next state is exact.
    """
    if n_states < 2 or n_actions < 2:
        raise ConfigurationError(f"grids need at least 2 points, got N={n_states}, M={n_actions}")
    if kernel not in KERNELS:
        raise ConfigurationError(f"kernel must be one of {KERNELS}, got {kernel!r}")
    if not tail_sds > 0:
        raise ConfigurationError(f"tail_sds must be positive, got {tail_sds}")
    upper = params.max_biomass
    if not upper > 0:
        raise ConfigurationError("state grid has zero width")
    states = np.linspace(0.0, upper, n_states)
    actions = np.linspace(0.0, upper, n_actions)

    harvest = np.minimum(actions[None, :], states[:, None])
    grown = logistic_growth(states[:, None] - harvest, params).reshape(-1)
    n_rows = n_states * n_actions

    if params.sigma > 0:
        rows, cols, probs = _lognormal_bins(grown, params.sigma, states, tail_sds)
    elif kernel == "nearest":
        rows, cols, probs = np.arange(n_rows), _nearest_bins(grown, states), np.ones(n_rows)
    else:
        split_cols, split_probs = _split_linear(grown, states)
        rows, cols, probs = np.repeat(np.arange(n_rows), 2), split_cols.reshape(-1), split_probs.reshape(-1)

    transitions = sparse.csr_matrix((probs, (rows, cols)), shape=(n_rows, n_states))
    transitions.sum_duplicates()
    transitions.eliminate_zeros()
    return DiscreteMdp(states=states, actions=actions, transitions=transitions, rewards=harvest, gamma=float(gamma))


@dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    greedy_actions: np.ndarray
    iterations: int
    residual: float
    residuals: list[float] = field(default_factory=list)

    def greedy_action_values(self, mdp: DiscreteMdp) -> np.ndarray:
        return mdp.actions[self.greedy_actions]


def value_iteration(
    mdp: DiscreteMdp,
    epsilon: float = 1e-8,
    max_iters: int = 10_000,
    horizon: int | None = None,
    log_every: int = 500,
) -> ValueFunction:
    """Synchronous value iteration from V = 0.

    With `horizon` set, runs exactly that many backups (finite-horizon
    backward induction, valid for gamma = 1) and returns the first-stage
    greedy policy. Otherwise iterates to a sup-norm change below `epsilon`,
    which requires gamma < 1.  Ties go to the lowest action index.
    """
    if horizon is None and mdp.gamma >= 1:
        raise ConfigurationError("infinite-horizon value iteration requires gamma < 1; pass horizon=H")
    if horizon is not None and int(horizon) < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")

    if int(max_iters) < 1:
        raise ConfigurationError(f"max_iters must be >= 1, got {max_iters}")

    values = np.zeros(mdp.n_states)
    residuals: list[float] = []
    limit = int(horizon) if horizon is not None else int(max_iters)
    for iteration in range(1, limit + 1):
        q = mdp.backup(values)
        updated = q.max(axis=1)
        residual = float(np.max(np.abs(updated - values)))
        residuals.append(residual)
        values = updated
        if log_every and iteration % log_every == 0:
            log_event("value_iteration_progress", level=logging.DEBUG, iteration=iteration, residual=residual)
        if horizon is None and residual < epsilon:
            break
    else:
        if horizon is None:
            raise ConvergenceError(
                f"value iteration did not reach epsilon={epsilon:g}",
                residual=residual,
                iterations=max_iters,
            )
    greedy = np.argmax(q, axis=1)
    log_event("value_iteration_finished", iteration=len(residuals), residual=residuals[-1])
    return ValueFunction(
        values=values, greedy_actions=greedy, iterations=len(residuals),
        residual=residuals[-1], residuals=residuals,
    )


def greedy_harvest(vf: ValueFunction, mdp: DiscreteMdp) -> np.ndarray:
    """Realized harvest of the greedy action in every grid state."""
    return np.minimum(vf.greedy_action_values(mdp), mdp.states)


def escapement_threshold(vf: ValueFunction, mdp: DiscreteMdp) -> float:
    """Median escapement over grid states where the greedy policy harvests."""
    harvest = greedy_harvest(vf, mdp)
    harvesting = harvest > 0
    if not np.any(harvesting):
        return float(mdp.states[-1])
    return float(np.median(mdp.states[harvesting] - harvest[harvesting]))


@dataclass(frozen=True)
class GreedyPolicy:
    """Greedy quota interpolated between grid states."""

    states: np.ndarray
    quotas: np.ndarray

    @classmethod
    def from_solution(cls, vf: ValueFunction, mdp: DiscreteMdp) -> "GreedyPolicy":
        return cls(states=mdp.states.copy(), quotas=greedy_harvest(vf, mdp))

    def __call__(self, observation) -> np.ndarray:
        X = float(np.asarray(observation, dtype=np.float64).reshape(-1)[0])
        return np.array([float(np.interp(X, self.states, self.quotas))])


def solve_fishery(
    params: FisheryParams,
    n_states: int = 400,
    n_actions: int = 400,
    gamma: float = 0.99,
    kernel: str = "nearest",
    tail_sds: float = 6.0,
    epsilon: float = 1e-8,
    max_iters: int = 10_000,
    horizon: int | None = None,
) -> tuple[DiscreteMdp, ValueFunction]:
    mdp = discretize_fishery(params, n_states, n_actions, gamma=gamma, kernel=kernel, tail_sds=tail_sds)
    return mdp, value_iteration(mdp, epsilon=epsilon, max_iters=max_iters, horizon=horizon)
