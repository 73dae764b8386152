"""
Replicate evaluation, policy curves and random-search tuning.

Replicates and tuning trials are independent, so both can fan out over a
process pool.  Workers are module-level functions returning results keyed
by index; aggregation sorts by that key, so the outcome does not depend on
completion order.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .conservation import ConservationParams, is_collapsed
from .decision_process import BoxSpace, Policy, Trajectory, rollout, trajectory_return
from .errors import ConfigurationError, SimulationError
from .helpers import log_event
from .td3 import EnvFactory, Td3Hyperparams, train

Z_95 = 1.96


def _map_indexed(worker: Callable, jobs: Sequence[tuple], max_workers: int = 1,
                 on_error: Callable[[int, Exception], Any] | None = None) -> list:
    """Run worker(*job) for every job; results come back in job order.

    With `on_error`, a job that raises (in-process or in a pool worker) yields
    on_error(index, exc) instead of aborting the whole map.
    """
    def settle(index: int, call: Callable[[], Any]) -> Any:
        if on_error is None:
            return call()
        try:
            return call()
        except Exception as exc:
            return on_error(index, exc)

    if max_workers <= 1 or len(jobs) <= 1:
        return [settle(i, lambda job=job: worker(*job)) for i, job in enumerate(jobs)]
    results: dict[int, Any] = {}
    with ProcessPoolExecutor(max_workers=max_workers) as executor:
        futures = {executor.submit(worker, *job): i for i, job in enumerate(jobs)}
        for future in as_completed(futures):
            results[futures[future]] = settle(futures[future], future.result)
    return [results[i] for i in range(len(jobs))]


def _run_replicate(env_factory: EnvFactory, policy: Policy, seed: int, index: int):
    env = env_factory(seed)
    try:
        traj = rollout(env, policy, seed=seed)
    except SimulationError as exc:
        raise SimulationError(f"replicate {index}: {exc}", step=exc.step, replicate=index) from exc
    return traj, trajectory_return(traj, env.gamma)


@dataclass
class EvaluationReport:
    """Per-step statistics of the first observation component over R replicates."""

    seeds: np.ndarray
    returns: np.ndarray
    state_mean: np.ndarray
    state_sd: np.ndarray
    state_min: np.ndarray
    state_max: np.ndarray
    reward_mean: np.ndarray
    final_observations: np.ndarray
    trajectories: list[Trajectory] | None = None

    @property
    def replicates(self) -> int:
        return int(self.returns.size)

    @property
    def ci_half_width(self) -> np.ndarray:
        return Z_95 * self.state_sd / math.sqrt(self.replicates)

    @property
    def ci_lo(self) -> np.ndarray:
        return self.state_mean - self.ci_half_width

    @property
    def ci_hi(self) -> np.ndarray:
        return self.state_mean + self.ci_half_width

    @property
    def cumulative_mean_reward(self) -> np.ndarray:
        return np.cumsum(self.reward_mean)

    @property
    def mean_return(self) -> float:
        return float(self.returns.mean())

    def to_frame(self) -> pd.DataFrame:
        """Columns t, mean_state, ci_lo, ci_hi, mean_reward, cumulative_mean_reward.

        Row t holds the state at t and the reward earned on the step out of
        t, so the final row has no reward.
        """
        n_rows = self.state_mean.size
        reward = np.full(n_rows, np.nan)
        reward[: self.reward_mean.size] = self.reward_mean
        cumulative = np.full(n_rows, np.nan)
        cumulative[: self.reward_mean.size] = self.cumulative_mean_reward
        return pd.DataFrame({
            "t": np.arange(n_rows),
            "mean_state": self.state_mean,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "mean_reward": reward,
            "cumulative_mean_reward": cumulative,
        })

    def returns_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"replicate": np.arange(self.replicates), "seed": self.seeds, "return": self.returns})
        for j in range(self.final_observations.shape[1]):
            frame[f"final_obs_{j}"] = self.final_observations[:, j]
        return frame

    def trajectories_frame(self) -> pd.DataFrame:
        if self.trajectories is None:
            raise ConfigurationError("trajectories were not kept; evaluate with keep_trajectories=True")
        frames = []
        for index, (seed, traj) in enumerate(zip(self.seeds, self.trajectories)):
            frame = traj.to_frame()
            frame.insert(0, "seed", int(seed))
            frame.insert(0, "replicate", index)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)


def evaluate_policy(
    env_factory: EnvFactory,
    policy: Policy,
    replicates: int = 100,
    base_seed: int = 0,
    keep_trajectories: bool = False,
    max_workers: int = 1,
) -> EvaluationReport:
    """Roll `policy` out on seeds base_seed .. base_seed + R - 1 and aggregate."""
    if int(replicates) < 1:
        raise ConfigurationError(f"replicate count must be >= 1, got {replicates}")
    seeds = np.arange(base_seed, base_seed + int(replicates), dtype=np.int64)
    jobs = [(env_factory, policy, int(seed), i) for i, seed in enumerate(seeds)]
    outcomes = _map_indexed(_run_replicate, jobs, max_workers)
    trajectories = [traj for traj, _ in outcomes]
    returns = np.array([ret for _, ret in outcomes], dtype=np.float64)

    states = np.stack([traj.observations[:, 0] for traj in trajectories])
    rewards = np.stack([traj.rewards for traj in trajectories])
    sd = states.std(axis=0, ddof=1) if len(trajectories) > 1 else np.zeros(states.shape[1])
    report = EvaluationReport(
        seeds=seeds,
        returns=returns,
        state_mean=states.mean(axis=0),
        state_sd=sd,
        state_min=states.min(axis=0),
        state_max=states.max(axis=0),
        reward_mean=rewards.mean(axis=0),
        final_observations=np.stack([traj.observations[-1] for traj in trajectories]),
        trajectories=trajectories if keep_trajectories else None,
    )
    log_event("evaluation_finished", replicates=report.replicates, mean_return=report.mean_return)
    return report


def compare_policies(
    env_factory: EnvFactory,
    policies: Mapping[str, Policy],
    replicates: int = 100,
    base_seed: int = 0,
    max_workers: int = 1,
) -> dict[str, EvaluationReport]:
    """Evaluate several policies on common seeds."""
    return {
        name: evaluate_policy(env_factory, policy, replicates, base_seed, max_workers=max_workers)
        for name, policy in policies.items()
    }


def comparison_frame(reports: Mapping[str, EvaluationReport]) -> pd.DataFrame:
    frames = []
    for name, report in reports.items():
        frame = report.to_frame()
        frame.insert(0, "policy", name)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def crossover_step(curve, baseline) -> int | None:
    """First step from which `curve` stays strictly above `baseline`, None if never."""
    curve = np.asarray(curve, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if curve.shape != baseline.shape:
        raise ConfigurationError(f"curves differ in length: {curve.shape} vs {baseline.shape}")
    above = curve > baseline
    if not above.size or not above[-1]:
        return None
    below = np.flatnonzero(~above)
    return 0 if below.size == 0 else int(below[-1] + 1)


def collapsed_fraction(report: EvaluationReport, params: ConservationParams) -> float:
    """Share of replicates whose final state lies in the collapsed basin."""
    return float(np.mean(is_collapsed(params, report.final_observations[:, 0])))


@dataclass(frozen=True)
class PolicyCurve:
    observations: np.ndarray
    actions: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        data = {f"obs_{j}": self.observations[:, j] for j in range(self.observations.shape[1])}
        data.update({f"action_{j}": self.actions[:, j] for j in range(self.actions.shape[1])})
        return pd.DataFrame(data)


def extract_policy_curve(policy: Policy, obs_grid, box: BoxSpace | None = None) -> PolicyCurve:
    grid = np.asarray(obs_grid, dtype=np.float64)
    if grid.ndim == 1:
        grid = grid[:, None]
    if box is not None and not all(box.contains(row) for row in grid):
        raise ConfigurationError("policy-curve grid leaves the observation box")
    actions = np.vstack([np.asarray(policy(row), dtype=np.float64).reshape(-1) for row in grid])
    return PolicyCurve(observations=grid, actions=actions)


def conservation_obs_grid(params: ConservationParams, n_states: int = 101,
                          m_values: Sequence[float] | None = None) -> np.ndarray:
    """[X, m] grid: X over [0, 2K] for each m (default: m0)."""
    m_values = [params.m0] if m_values is None else list(m_values)
    X = np.linspace(0.0, params.max_state, int(n_states))
    return np.array([[x, m] for m in m_values for x in X])


@dataclass(frozen=True)
class Knob:
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low <= self.high:
            raise ConfigurationError(f"knob range must satisfy low <= high, got [{self.low}, {self.high}]")
        if self.log and not self.low > 0:
            raise ConfigurationError(f"log-uniform knob needs a positive range, got [{self.low}, {self.high}]")

    def sample(self, rng: np.random.Generator) -> float:
        if self.low == self.high:
            return float(self.low)
        if self.log:
            return float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        return float(rng.uniform(self.low, self.high))


_INTEGER_KNOBS = {"policy_delay", "batch_size", "warmup_steps"}


@dataclass(frozen=True)
class SearchSpace:
    knobs: dict[str, Knob] = field(default_factory=dict)

    def __post_init__(self):
        allowed = {f.name for f in fields(Td3Hyperparams)} - {"seed", "total_env_steps", "hidden_sizes"}
        unknown = sorted(set(self.knobs) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown search knobs: {', '.join(unknown)}")

    @classmethod
    def default(cls) -> "SearchSpace":
        return cls({
            "actor_lr": Knob(1e-4, 3e-3, log=True),
            "critic_lr": Knob(1e-4, 3e-3, log=True),
            "tau": Knob(1e-3, 2e-2, log=True),
            "exploration_noise": Knob(0.05, 0.3),
        })

    def sample(self, rng: np.random.Generator) -> dict[str, float | int]:
        point: dict[str, float | int] = {}
        for name in sorted(self.knobs):
            value = self.knobs[name].sample(rng)
            point[name] = int(round(value)) if name in _INTEGER_KNOBS else value
        return point


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    hyperparams: dict
    mean_return: float
    sd_return: float
    seed: int
    wall_time_s: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class TuningResult:
    best: TrialRecord | None
    trials: list[TrialRecord]

    def frame(self) -> pd.DataFrame:
        return trials_frame(self.trials)


def trials_frame(trials: Sequence[TrialRecord]) -> pd.DataFrame:
    rows = []
    for trial in trials:
        knobs = {k: v for k, v in trial.hyperparams.items() if k != "seed"}
        if "hidden_sizes" in knobs:
            knobs["hidden_sizes"] = "x".join(str(s) for s in knobs["hidden_sizes"])
        rows.append({
            "trial_id": trial.trial_id,
            **knobs,
            "mean_return": trial.mean_return,
            "sd_return": trial.sd_return,
            "seed": trial.seed,
            "wall_time_s": trial.wall_time_s,
            "error": trial.error or "",
        })
    return pd.DataFrame(rows)


def best_trial(trials: Sequence[TrialRecord]) -> TrialRecord | None:
    """Highest mean return among successful trials; ties go to the earliest."""
    successful = [t for t in trials if t.ok and np.isfinite(t.mean_return)]
    if not successful:
        return None
    return max(successful, key=lambda t: (t.mean_return, -t.trial_id))


def _run_trial(env_factory: EnvFactory, hyper: Td3Hyperparams, trial_id: int) -> TrialRecord:
    start = time.perf_counter()
    try:
        result = train(env_factory, hyper)
        last = result.curve.iloc[-1]
        mean, sd, error = float(last["eval_return_mean"]), float(last["eval_return_sd"]), None
    except Exception as exc:
        mean, sd, error = float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"
        log_event("trial_failed", level=logging.WARNING, trial_id=trial_id, error=error)
    return TrialRecord(
        trial_id=trial_id,
        hyperparams=hyper.to_dict(),
        mean_return=mean,
        sd_return=sd,
        seed=hyper.seed,
        wall_time_s=round(time.perf_counter() - start, 3),
        error=error,
    )


def random_search_tune(
    env_factory: EnvFactory,
    search_space: SearchSpace,
    n_trials: int,
    trial_budget: int | None = None,
    seed: int = 0,
    base_hyper: Td3Hyperparams | None = None,
    eval_episodes: int = 10,
    include_default: bool = True,
    max_workers: int = 1,
) -> TuningResult:
    """Train one agent per sampled hyperparameter point and keep the best.

    Trial 0 runs `base_hyper` unchanged when `include_default` is set.  Each
    trial trains for `trial_budget` steps (default a quarter of the base
    budget) with seed `seed + trial_id` and is scored on at least ten
    evaluation episodes.  Failed trials are recorded, never raised.
    """
    if int(n_trials) < 1:
        raise ConfigurationError(f"n_trials must be >= 1, got {n_trials}")
    base = base_hyper or Td3Hyperparams()
    budget = int(trial_budget) if trial_budget is not None else max(base.total_env_steps // 4, 1)
    rng = np.random.default_rng(seed)

    jobs = []
    for trial_id in range(int(n_trials)):
        point = {} if (trial_id == 0 and include_default) else search_space.sample(rng)
        try:
            hyper = base.replace(
                **point,
                total_env_steps=budget,
                eval_interval=budget,
                eval_episodes=max(int(eval_episodes), 10),
                seed=seed + trial_id,
            )
        except ConfigurationError as exc:
            log_event("trial_rejected", trial_id=trial_id, error=str(exc))
            jobs.append(None)
            continue
        jobs.append((env_factory, hyper, trial_id))

    runnable = [job for job in jobs if job is not None]

    def worker_failed(index: int, exc: Exception) -> TrialRecord:
        _, hyper, trial_id = runnable[index]
        error = f"{type(exc).__name__}: {exc}"
        log_event("trial_failed", level=logging.WARNING, trial_id=trial_id, error=error)
        return TrialRecord(trial_id, hyper.to_dict(), float("nan"), float("nan"), hyper.seed, 0.0, error=error)

    records = _map_indexed(_run_trial, runnable, max_workers, on_error=worker_failed)
    finished = {record.trial_id: record for record in records}
    trials: list[TrialRecord] = []
    for trial_id, job in enumerate(jobs):
        if job is None:
            trials.append(TrialRecord(trial_id, {}, float("nan"), float("nan"), seed + trial_id, 0.0,
                                      error="ConfigurationError: invalid sampled point"))
            continue
        record = finished[trial_id]
        trials.append(record)
        log_event("trial_finished", trial_id=trial_id, mean_return=record.mean_return,
                  wall_time_s=record.wall_time_s, error=record.error)

    best = best_trial(trials)
    if best is None:
        log_event("tuning_failed", n_trials=len(trials))
    else:
        log_event("tuning_finished", best_trial=best.trial_id, best_return=best.mean_return)
    return TuningResult(best=best, trials=trials)
