"""Tests for the cart-pole simulator."""

import numpy as np
import pytest

from ipower import errors
from ipower.cartpole import (
    CartpolePhysics,
    CartpoleState,
    generate_batch,
    initial_state,
    run_rollout,
    step,
)
from ipower.policy import BernoulliLogisticPolicy


class MirroredRandom:
    """Generator whose uniform draws are reflected, ``u -> 1 - u``."""

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)

    def random(self):
        return 1.0 - self._rng.random()


def test_step_from_rest():
    """Pushing right from rest accelerates the cart and tips the pole left."""
    state, terminated = step(CartpoleState(0.0, 0.0, 0.0, 0.0), 1)
    assert not terminated
    assert state.x == 0.0
    assert state.theta_pole == 0.0
    assert state.x_dot == pytest.approx(0.195122, abs=1e-6)
    assert state.theta_dot == pytest.approx(-0.292683, abs=1e-6)

    left, _ = step(CartpoleState(0.0, 0.0, 0.0, 0.0), 0)
    assert left == state.mirrored()


@pytest.mark.parametrize(
    "state, terminated",
    [
        (CartpoleState(2.39, 1.0, 0.0, 0.0), True),
        (CartpoleState(-2.39, -1.0, 0.0, 0.0), True),
        (CartpoleState(2.0, 1.0, 0.0, 0.0), False),
        (CartpoleState(0.0, 0.0, 0.2, 1.0), True),
    ],
)
def test_termination(state, terminated):
    assert step(state, 1)[1] is terminated


def test_step_is_mirror_symmetric():
    """Reflecting the state and the action reflects the next state."""
    rng = np.random.default_rng(7)
    for _ in range(50):
        state = CartpoleState(*rng.uniform(-0.2, 0.2, size=4))
        action = int(rng.integers(0, 2))
        forward, done = step(state, action)
        mirrored, mirrored_done = step(state.mirrored(), 1 - action)
        np.testing.assert_array_equal(mirrored.as_array(), -forward.as_array())
        assert done == mirrored_done


def test_rollout_mirror_symmetry():
    """Mirrored start and random draws give the mirrored trajectory."""
    theta = np.array([0.3, 1.0, 4.0, 1.5])
    start = initial_state(np.random.default_rng(3))
    rollout = run_rollout(
        theta, 200, np.random.default_rng(11), initial=start
    )
    mirrored = run_rollout(
        theta, 200, MirroredRandom(11), initial=start.mirrored()
    )
    assert mirrored.reward == rollout.reward
    np.testing.assert_allclose(mirrored.states, -rollout.states, atol=1e-12)
    np.testing.assert_array_equal(mirrored.actions, 1 - rollout.actions)


def test_rollout_is_deterministic_per_seed():
    theta = np.array([0.1, -0.2, 0.5, 0.3])
    first = run_rollout(theta, rng=np.random.default_rng(5))
    second = run_rollout(theta, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(first.states, second.states)
    np.testing.assert_array_equal(first.actions, second.actions)
    assert first.log_prob_logging == second.log_prob_logging


def test_rollout_records_its_log_prob():
    """The stored log-probability is the logging policy's, and R is the length."""
    policy = BernoulliLogisticPolicy(state_dim=4)
    theta = np.array([0.5, 0.5, 2.0, 0.5])
    rollout = run_rollout(theta, 100, np.random.default_rng(0))
    assert rollout.reward == len(rollout)
    assert 1 <= rollout.reward <= 100
    assert rollout.log_prob_logging == policy.log_prob_rollout(theta, rollout)
    np.testing.assert_array_less(np.abs(rollout.states[0]), 0.05 + 1e-15)


def test_rollout_length_limit():
    rollout = run_rollout(np.zeros(4), 3, np.random.default_rng(1))
    assert 1 <= rollout.reward <= 3


def test_random_policy_mean_return():
    """The uniformly random policy survives about 22 steps on average."""
    batch = generate_batch(np.zeros(4), 1000, base_seed=0)
    returns = batch.rewards
    assert np.all((returns >= 1) & (returns <= 400))
    assert 18.0 <= np.mean(returns) <= 28.0


def test_generate_batch_is_reproducible():
    """Each rollout depends on its own seed only."""
    theta = np.array([0.2, 0.1, 1.0, 0.4])
    batch = generate_batch(theta, 6, 50, base_seed=100)
    again = generate_batch(theta, 6, 50, base_seed=100)
    shifted = generate_batch(theta, 3, 50, base_seed=103)
    np.testing.assert_array_equal(batch.rewards, again.rewards)
    np.testing.assert_array_equal(batch.features, again.features)
    for original, regenerated in zip(batch.rollouts[3:], shifted.rollouts):
        np.testing.assert_array_equal(original.states, regenerated.states)
    np.testing.assert_array_equal(batch.logging_params, theta)


def test_generate_batch_with_bias():
    policy = BernoulliLogisticPolicy(state_dim=4, bias=True)
    batch = generate_batch(np.zeros(5), 4, 20, policy=policy)
    assert batch.dim == 5
    assert batch.features.shape[1] == 5


@pytest.mark.parametrize(
    "kwargs", [{"gravity": 0.0}, {"time_step": -0.02}, {"pole_mass": np.nan}]
)
def test_physics_validation(kwargs):
    with pytest.raises(errors.ConfigError):
        CartpolePhysics(**kwargs)


def test_invalid_rollout_arguments():
    with pytest.raises(errors.ConfigError, match="max_steps"):
        run_rollout(np.zeros(4), 0)
    with pytest.raises(errors.PolicyInputError):
        run_rollout(np.zeros(3), 10)
