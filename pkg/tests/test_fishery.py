import numpy as np
import pytest

from conservation_rl.baselines import EscapementPolicy
from conservation_rl.decision_process import rollout
from conservation_rl.errors import ConfigurationError, SimulationError
from conservation_rl.fishery import FisheryEnv, FisheryParams, logistic_growth, recruitment_noise


def test_reset_returns_initial_biomass(make_fishery):
    env = make_fishery()
    obs, info = env.reset(seed=0)
    assert obs.tolist() == [0.75]
    assert info["t"] == 0
    obs, _ = make_fishery(x0=0.0).reset(seed=0)
    assert obs.tolist() == [0.0]


def test_deterministic_step_example(make_fishery):
    env = make_fishery(x0=0.5, sigma=0.0)
    result = env.transition([0.1])
    assert result.reward == pytest.approx(0.1)
    assert result.observation[0] == pytest.approx(0.472)
    assert result.info["escapement"] == pytest.approx(0.4)


def test_msy_escapement_is_a_fixed_point(make_fishery):
    env = make_fishery(x0=0.575, sigma=0.0)
    for _ in range(5):
        result = env.transition([0.075])
        assert result.reward == pytest.approx(0.075)
        assert result.observation[0] == pytest.approx(0.575, abs=1e-12)


def test_harvest_is_capped_by_stock(make_fishery):
    env = make_fishery(x0=0.2, sigma=0.0)
    result = env.transition([1.5])
    assert result.reward == pytest.approx(0.2)
    assert result.observation[0] == 0.0


def test_extinction_is_absorbing(make_fishery):
    env = make_fishery(x0=0.0)
    for _ in range(10):
        result = env.transition([0.0])
        assert result.observation[0] == 0.0
        assert result.reward == 0.0


def test_non_finite_quota_is_rejected(make_fishery):
    env = make_fishery()
    with pytest.raises(SimulationError):
        env.transition([np.inf])


def test_observations_stay_in_box_under_random_quotas(make_fishery):
    env = make_fishery(sigma=0.3, horizon=500)
    rng = np.random.default_rng(11)
    for _ in range(500):
        result = env.transition(rng.uniform(0.0, 2.0, size=1))
        assert 0.0 <= result.observation[0] <= 2.0
        assert result.reward >= 0.0


def test_equal_seeds_give_identical_episodes():
    policy = EscapementPolicy(0.4)
    first = rollout(FisheryEnv(seed=5), policy, seed=5)
    second = rollout(FisheryEnv(seed=5), policy, seed=5)
    other = rollout(FisheryEnv(seed=6), policy, seed=6)
    assert np.array_equal(first.observations, second.observations)
    assert np.array_equal(first.rewards, second.rewards)
    assert not np.array_equal(first.observations, other.observations)


def test_zero_quota_converges_monotonically_to_capacity(make_fishery):
    for start in (0.2, 1.8):
        env = make_fishery(x0=start, sigma=0.0, horizon=200)
        traj = rollout(env, lambda obs: np.array([0.0]), seed=0)
        path = traj.observations[:, 0]
        steps = np.diff(path)
        assert np.all(steps >= -1e-12) if start < 1 else np.all(steps <= 1e-12)
        assert path[-1] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("S_star", [0.3, 0.5, 0.7])
def test_escapement_yield_matches_surplus_production(S_star):
    params = FisheryParams(sigma=0.0)
    traj = rollout(FisheryEnv(params), EscapementPolicy(S_star), seed=0)
    assert traj.rewards[0] == pytest.approx(0.75 - S_star)
    expected = params.r * S_star * (1 - S_star / params.K)
    assert np.allclose(traj.rewards[1:], expected, atol=1e-12)


def test_msy_escapement_rewards_from_second_step():
    traj = rollout(FisheryEnv(FisheryParams(sigma=0.0)), EscapementPolicy(0.5), seed=0)
    assert traj.rewards[0] == pytest.approx(0.25)
    assert np.allclose(traj.rewards[1:], 0.075, atol=1e-12)


def test_lognormal_noise_mean():
    draws = recruitment_noise(np.random.default_rng(0), 0.1, size=10**6)
    expected = np.exp(0.1**2 / 2)
    sd = np.sqrt((np.exp(0.1**2) - 1) * np.exp(0.1**2))
    assert abs(draws.mean() - expected) < 3 * sd / np.sqrt(draws.size)


def test_zero_sigma_noise_is_exactly_one():
    assert np.all(recruitment_noise(np.random.default_rng(0), 0.0, size=100) == 1.0)


def test_logistic_growth_peaks_at_half_capacity():
    params = FisheryParams()
    S = np.linspace(0.0, 1.0, 101)
    surplus = logistic_growth(S, params) - S
    assert S[np.argmax(surplus)] == pytest.approx(0.5)
    assert surplus.max() == pytest.approx(params.msy)


@pytest.mark.parametrize("changes", [{"r": 0.0}, {"K": -1.0}, {"sigma": -0.1}, {"x0": 3.0}, {"horizon": 0}])
def test_invalid_parameters_are_rejected(changes):
    with pytest.raises(ConfigurationError):
        FisheryParams(**changes)


def test_gymnasium_spaces():
    env = FisheryEnv()
    assert env.observation_space.shape == (1,)
    assert env.action_space.high.tolist() == [2.0]
