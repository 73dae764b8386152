import logging
from functools import partial

import numpy as np
import pandas as pd
import pytest

from conservation_rl.baselines import EscapementPolicy, SteadyStatePolicy
from conservation_rl.conservation import ConservationParams, make_conservation_env
from conservation_rl.decision_process import BoxSpace
from conservation_rl.errors import ConfigurationError, SimulationError
from conservation_rl.experiments import (
    Knob,
    SearchSpace,
    TrialRecord,
    best_trial,
    collapsed_fraction,
    compare_policies,
    comparison_frame,
    conservation_obs_grid,
    crossover_step,
    evaluate_policy,
    extract_policy_curve,
    random_search_tune,
)
from conservation_rl.fishery import FisheryParams, make_fishery_env
from conservation_rl.td3 import Td3Hyperparams

FISHERY = partial(make_fishery_env, FisheryParams())
DETERMINISTIC_FISHERY = partial(make_fishery_env, FisheryParams(sigma=0.0))
TINY_FISHERY = partial(make_fishery_env, FisheryParams(horizon=10))


def _no_action(obs):
    return np.array([0.0])


def _nan_action(obs):
    return np.array([np.nan])


def _tiny_hyper(**changes):
    settings = dict(total_env_steps=80, warmup_steps=20, batch_size=8, hidden_sizes=(4,), eval_episodes=2)
    settings.update(changes)
    return Td3Hyperparams(**settings)


def test_deterministic_replicates_agree():
    report = evaluate_policy(DETERMINISTIC_FISHERY, EscapementPolicy(0.5), replicates=5)
    assert np.allclose(report.state_sd, 0.0, atol=1e-12)
    assert np.allclose(report.ci_lo, report.ci_hi, atol=1e-12)
    assert np.all(report.returns == report.returns[0])


def test_single_replicate_statistics():
    report = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=1, keep_trajectories=True)
    assert np.array_equal(report.state_mean, report.trajectories[0].observations[:, 0])
    assert np.all(report.state_sd == 0.0)


def test_mean_lies_between_extremes():
    report = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=20)
    assert np.all(report.state_min <= report.state_mean + 1e-12)
    assert np.all(report.state_mean <= report.state_max + 1e-12)
    assert np.all(report.ci_lo <= report.ci_hi)


def test_evaluation_is_reproducible():
    first = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=10, base_seed=7)
    second = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=10, base_seed=7)
    pd.testing.assert_frame_equal(first.to_frame(), second.to_frame())
    assert first.seeds.tolist() == list(range(7, 17))


def test_parallel_evaluation_matches_sequential():
    sequential = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=6)
    parallel = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=6, max_workers=2)
    pd.testing.assert_frame_equal(sequential.to_frame(), parallel.to_frame())
    assert np.array_equal(sequential.returns, parallel.returns)


def test_escapement_holds_stock_near_msy_level():
    report = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=100)
    assert report.state_mean[20:].mean() == pytest.approx(0.575, abs=0.02)
    assert report.cumulative_mean_reward[-1] == pytest.approx(report.mean_return)


def test_report_frames():
    report = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=3, keep_trajectories=True)
    frame = report.to_frame()
    assert list(frame.columns) == ["t", "mean_state", "ci_lo", "ci_hi", "mean_reward", "cumulative_mean_reward"]
    assert len(frame) == 101
    returns = report.returns_frame()
    assert list(returns.columns) == ["replicate", "seed", "return", "final_obs_0"]
    trajectories = report.trajectories_frame()
    assert len(trajectories) == 3 * 101
    assert list(trajectories.columns[:3]) == ["replicate", "seed", "t"]


def test_trajectories_frame_needs_kept_trajectories():
    report = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=2)
    with pytest.raises(ConfigurationError):
        report.trajectories_frame()


def test_failing_replicate_is_named():
    with pytest.raises(SimulationError) as excinfo:
        evaluate_policy(FISHERY, _nan_action, replicates=3)
    assert excinfo.value.replicate == 0


def test_compare_policies_uses_common_seeds():
    reports = compare_policies(FISHERY, {"msy": EscapementPolicy(0.5), "none": _no_action}, replicates=4)
    assert reports["msy"].seeds.tolist() == reports["none"].seeds.tolist()
    assert reports["none"].mean_return == 0.0
    frame = comparison_frame(reports)
    assert set(frame["policy"]) == {"msy", "none"}


def test_crossover_step_examples():
    assert crossover_step([0, 1, 3, 5], [1, 1, 2, 3]) == 2
    assert crossover_step([2, 3], [1, 1]) == 0
    assert crossover_step([0, 3, 0], [1, 1, 1]) is None
    with pytest.raises(ConfigurationError):
        crossover_step([1, 2], [1])


def test_steady_state_keeps_deterministic_ecosystem_intact():
    params = ConservationParams(sigma=0.0)
    report = evaluate_policy(partial(make_conservation_env, params), SteadyStatePolicy(params.alpha), replicates=3)
    assert collapsed_fraction(report, params) == 0.0


def test_unmanaged_deterministic_ecosystem_collapses():
    params = ConservationParams(sigma=0.0)
    report = evaluate_policy(partial(make_conservation_env, params), _no_action, replicates=2)
    assert collapsed_fraction(report, params) == 1.0


def test_steady_state_with_noise_still_crosses_the_fold():
    params = ConservationParams()
    report = evaluate_policy(partial(make_conservation_env, params), SteadyStatePolicy(params.alpha), replicates=20)
    assert collapsed_fraction(report, params) > 0.0


def test_policy_curve_for_escapement():
    curve = extract_policy_curve(EscapementPolicy(0.5), [0.0, 0.5, 1.0])
    assert curve.actions[:, 0].tolist() == [0.0, 0.0, 0.5]
    assert list(curve.to_frame().columns) == ["obs_0", "action_0"]


def test_policy_curve_for_steady_state_is_flat():
    params = ConservationParams()
    grid = conservation_obs_grid(params, n_states=11, m_values=[0.15, 0.2])
    assert grid.shape == (22, 2)
    curve = extract_policy_curve(SteadyStatePolicy(params.alpha), grid)
    assert np.all(curve.actions == params.alpha)


def test_policy_curve_grid_must_fit_box():
    with pytest.raises(ConfigurationError):
        extract_policy_curve(EscapementPolicy(0.5), [0.0, 3.0], box=BoxSpace.interval(0.0, 2.0))


def test_search_space_rejects_unknown_knobs():
    with pytest.raises(ConfigurationError):
        SearchSpace({"learning_rate": Knob(0.1, 0.2)})
    with pytest.raises(ConfigurationError):
        Knob(0.0, 1.0, log=True)


def test_search_space_sampling_stays_in_range():
    space = SearchSpace.default()
    rng = np.random.default_rng(0)
    for _ in range(50):
        point = space.sample(rng)
        assert 1e-4 <= point["actor_lr"] <= 3e-3
        assert 0.05 <= point["exploration_noise"] <= 0.3


def test_best_trial_is_invariant_under_affine_rescaling():
    returns = [3.0, 7.5, 7.5, -1.0]
    trials = [TrialRecord(i, {}, r, 0.0, i, 0.0) for i, r in enumerate(returns)]
    rescaled = [TrialRecord(i, {}, 2.5 * r + 10.0, 0.0, i, 0.0) for i, r in enumerate(returns)]
    assert best_trial(trials).trial_id == 1
    assert best_trial(rescaled).trial_id == 1
    assert best_trial([TrialRecord(0, {}, float("nan"), 0.0, 0, 0.0, error="boom")]) is None


def test_single_trial_tuning_returns_that_trial():
    result = random_search_tune(TINY_FISHERY, SearchSpace.default(), n_trials=1, base_hyper=_tiny_hyper())
    assert len(result.trials) == 1
    assert result.best is result.trials[0]
    assert result.best.hyperparams["actor_lr"] == _tiny_hyper().actor_lr
    assert result.best.hyperparams["total_env_steps"] == 20
    assert result.best.hyperparams["eval_episodes"] == 10


def test_collapsed_search_space_differs_only_by_seed():
    point = Knob(2e-3, 2e-3)
    space = SearchSpace({"actor_lr": point, "critic_lr": point})
    result = random_search_tune(TINY_FISHERY, space, n_trials=3, trial_budget=40, seed=5,
                                base_hyper=_tiny_hyper(), include_default=False)
    params = [dict(t.hyperparams) for t in result.trials]
    seeds = [p.pop("seed") for p in params]
    assert seeds == [5, 6, 7]
    assert params[0] == params[1] == params[2]
    frame = result.frame()
    assert frame["trial_id"].tolist() == [0, 1, 2]
    assert "mean_return" in frame.columns


def test_invalid_sampled_points_are_recorded_not_raised():
    space = SearchSpace({"policy_delay": Knob(0, 0)})
    result = random_search_tune(TINY_FISHERY, space, n_trials=2, trial_budget=40, base_hyper=_tiny_hyper())
    assert result.trials[0].ok
    assert not result.trials[1].ok
    assert result.best.trial_id == 0


def test_twenty_trial_search_never_loses_to_the_defaults():
    result = random_search_tune(TINY_FISHERY, SearchSpace.default(), n_trials=20, trial_budget=40, seed=2,
                                base_hyper=_tiny_hyper())
    assert len(result.trials) == 20
    default = result.trials[0]
    assert default.ok
    assert default.hyperparams["actor_lr"] == _tiny_hyper().actor_lr
    assert default.hyperparams["tau"] == _tiny_hyper().tau
    assert result.best.mean_return >= default.mean_return
    assert len({t.hyperparams["critic_lr"] for t in result.trials}) == 20


def _broken_env(seed):
    raise KeyError(f"no environment for seed {seed}")


def test_trial_crash_of_any_kind_is_recorded(caplog):
    caplog.set_level(logging.INFO, logger="conservation_rl")
    result = random_search_tune(_broken_env, SearchSpace.default(), n_trials=3, trial_budget=40,
                                base_hyper=_tiny_hyper())
    assert len(result.trials) == 3
    assert result.best is None
    assert all(t.error.startswith("KeyError") for t in result.trials)
    assert "trial_failed" in caplog.text


def test_worker_failure_is_recorded_and_search_continues():
    def unpicklable_factory(seed):
        return make_fishery_env(FisheryParams(horizon=10), seed)

    result = random_search_tune(unpicklable_factory, SearchSpace.default(), n_trials=2, trial_budget=40,
                                base_hyper=_tiny_hyper(), max_workers=2)
    assert [t.trial_id for t in result.trials] == [0, 1]
    assert not any(t.ok for t in result.trials)
    assert result.best is None
