"""Full-scale behaviour checks; run with `pytest --runslow`."""
import os
from functools import partial

import numpy as np
import pytest

from conservation_rl.baselines import EscapementPolicy, SteadyStatePolicy
from conservation_rl.conservation import ConservationParams, make_conservation_env
from conservation_rl.experiments import (
    SearchSpace,
    collapsed_fraction,
    crossover_step,
    evaluate_policy,
    extract_policy_curve,
    random_search_tune,
)
from conservation_rl.fishery import FisheryParams, make_fishery_env
from conservation_rl.stock import StockSeries, recommend_quotas
from conservation_rl.td3 import Td3Hyperparams, train

pytestmark = pytest.mark.slow

FISHERY = partial(make_fishery_env, FisheryParams())
CONSERVATION_PARAMS = ConservationParams()
CONSERVATION = partial(make_conservation_env, CONSERVATION_PARAMS)
SEEDS = (0, 1, 2)
TRAINING_STEPS = 300_000
TUNING_TRIALS = 20
WORKERS = min(4, os.cpu_count() or 1)


def _tuned_hyperparams(env_factory, seed):
    """Random search at a quarter of the budget, then the best point at full budget."""
    base = Td3Hyperparams(total_env_steps=TRAINING_STEPS, seed=seed)
    result = random_search_tune(env_factory, SearchSpace.default(), n_trials=TUNING_TRIALS,
                                trial_budget=TRAINING_STEPS // 4, seed=seed, base_hyper=base,
                                max_workers=WORKERS)
    assert result.best is not None
    assert result.best.mean_return >= result.trials[0].mean_return
    return Td3Hyperparams(**result.best.hyperparams).replace(
        total_env_steps=TRAINING_STEPS, eval_interval=base.eval_interval, seed=seed)


def _declining_series(k_estimate=1000.0):
    years = np.arange(1990, 2010)
    biomass = np.linspace(1.8, 0.1, years.size) * k_estimate
    return StockSeries(years=years, biomass=biomass, catch=np.zeros(years.size), k_estimate=k_estimate)


def test_tuned_td3_approaches_escapement_on_fishery():
    baseline = evaluate_policy(FISHERY, EscapementPolicy(0.5), replicates=100, base_seed=10_000).mean_return
    series = _declining_series()
    large = series.normalized_biomass() > 1.0
    escapement_quotas = recommend_quotas(EscapementPolicy(0.5), series)["recommended_quota"].to_numpy()
    passed = 0
    for seed in SEEDS:
        result = train(FISHERY, _tuned_hyperparams(FISHERY, seed))
        policy = result.agent.policy()
        report = evaluate_policy(FISHERY, policy, replicates=100, base_seed=10_000)
        curve = extract_policy_curve(policy, np.linspace(0.0, 0.4, 41))
        quotas = recommend_quotas(policy, series)["recommended_quota"].to_numpy()
        if (report.mean_return >= 0.95 * baseline
                and np.mean(np.abs(curve.actions)) < 0.02
                and np.all(quotas[large] <= escapement_quotas[large] + 0.02 * series.k_estimate)):
            passed += 1
    assert passed >= 2


def test_tuned_td3_keeps_ecosystem_from_collapsing():
    steady = evaluate_policy(CONSERVATION, SteadyStatePolicy(CONSERVATION_PARAMS.alpha), replicates=100,
                             base_seed=10_000)
    passed = 0
    for seed in SEEDS:
        result = train(CONSERVATION, _tuned_hyperparams(CONSERVATION, seed))
        trained = evaluate_policy(CONSERVATION, result.agent.policy(), replicates=100, base_seed=10_000)
        crossing = crossover_step(trained.cumulative_mean_reward, steady.cumulative_mean_reward)
        if (trained.mean_return > steady.mean_return and crossing is not None and crossing < 250
                and collapsed_fraction(trained, CONSERVATION_PARAMS) <= 0.10):
            passed += 1
    assert passed >= 2


def test_steady_state_rule_often_collapses_under_noise():
    policy = SteadyStatePolicy(CONSERVATION_PARAMS.alpha)
    report = evaluate_policy(CONSERVATION, policy, replicates=100)
    fraction = collapsed_fraction(report, CONSERVATION_PARAMS)
    assert fraction >= 0.5
    assert np.all(np.isfinite(report.returns))

    reference = collapsed_fraction(
        evaluate_policy(CONSERVATION, policy, replicates=10_000, base_seed=100_000, max_workers=WORKERS),
        CONSERVATION_PARAMS,
    )
    assert reference >= 0.5
    # 100 replicates against the large-sample estimate, four binomial standard errors.
    assert abs(fraction - reference) <= 4 * np.sqrt(reference * (1 - reference) / 100) + 1e-3
