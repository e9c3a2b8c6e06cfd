"""Tests for the log-concave policy families."""

import numpy as np
import pytest

from ipower import errors
from ipower.policy import (
    BernoulliLogisticPolicy,
    StepObservation,
    get_policy_family,
    params_like,
)

LOG_HALF = np.log(0.5)


def _random_steps(rng, n_steps, dim):
    return [
        StepObservation(rng.normal(size=dim), int(rng.integers(0, 2)))
        for _ in range(n_steps)
    ]


def _central_difference(fn, x, h=1e-5):
    columns = []
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        columns.append((fn(x + step) - fn(x - step)) / (2 * h))
    return np.array(columns)


@pytest.mark.parametrize("action", [0, 1])
@pytest.mark.parametrize(
    "state", [[0.0, 0.0, 0.0, 0.0], [1.0, -2.0, 3.0, 0.5], [-10.0, 0, 0, 7]]
)
def test_log_prob_step_uniform_at_zero(policy, state, action):
    """The zero parameter vector puts probability 1/2 on each action."""
    obs = StepObservation(state, action)
    assert policy.log_prob_step(np.zeros(4), obs) == pytest.approx(
        LOG_HALF, abs=1e-12
    )


def test_log_prob_step_value(policy):
    """log sigmoid(2) for the right push with logit 2."""
    obs = StepObservation([1.0, 0.0, 0.0, 0.0], 1)
    value = policy.log_prob_step([2.0, 0.0, 0.0, 0.0], obs)
    assert value == pytest.approx(-0.126928, abs=1e-6)
    assert value == pytest.approx(-np.log1p(np.exp(-2.0)), abs=1e-14)


@pytest.mark.parametrize("logit", [-50.0, -3.0, 0.0, 0.7, 40.0])
def test_action_probabilities_sum_to_one(logit):
    """exp(log pi(1|s)) + exp(log pi(0|s)) == 1."""
    policy = BernoulliLogisticPolicy(state_dim=1)
    total = sum(
        np.exp(policy.log_prob_step([logit], StepObservation([1.0], a)))
        for a in (0, 1)
    )
    assert total == pytest.approx(1.0, abs=1e-12)


def test_log_prob_step_is_stable_for_large_logits():
    """Huge logits give finite log-probabilities instead of log(0)."""
    policy = BernoulliLogisticPolicy(state_dim=1)
    likely = policy.log_prob_step([1000.0], StepObservation([1.0], 1))
    unlikely = policy.log_prob_step([1000.0], StepObservation([1.0], 0))
    assert likely == pytest.approx(0.0, abs=1e-300)
    assert unlikely == pytest.approx(-1000.0)


def test_log_prob_rollout_sums_steps(policy):
    """Rollout log-probabilities add up the per-step terms."""
    steps = [StepObservation([1.0, 2.0, 0.0, 0.0], a) for a in (1, 0, 1)]
    assert policy.log_prob_rollout(np.zeros(4), steps) == pytest.approx(
        3 * LOG_HALF, abs=1e-12
    )
    assert policy.log_prob_rollout(np.zeros(4), steps) == pytest.approx(
        -2.079442, abs=1e-6
    )

    theta = [2.0, 0.0, 0.0, 0.0]
    two = [StepObservation([1.0, 0.0, 0.0, 0.0], a) for a in (1, 0)]
    expected = np.log(1 / (1 + np.exp(-2.0))) + np.log(1 / (1 + np.exp(2.0)))
    assert policy.log_prob_rollout(theta, two) == pytest.approx(
        expected, abs=1e-12
    )


def test_log_prob_rollout_single_step_matches_step(policy):
    """A one-step rollout has the log-probability of its step."""
    obs = StepObservation([0.3, -0.1, 0.2, 1.5], 0)
    theta = [0.5, -1.0, 2.0, 0.1]
    assert policy.log_prob_rollout(theta, [obs]) == policy.log_prob_step(
        theta, obs
    )


def test_log_prob_rollout_is_additive(policy):
    """Concatenating step sequences adds their log-probabilities."""
    rng = np.random.default_rng(0)
    theta = rng.normal(size=4)
    first, second = _random_steps(rng, 3, 4), _random_steps(rng, 5, 4)
    combined = policy.log_prob_rollout(theta, first + second)
    assert combined == pytest.approx(
        policy.log_prob_rollout(theta, first)
        + policy.log_prob_rollout(theta, second),
        abs=1e-12,
    )


def test_log_prob_rollout_rejects_empty(policy):
    """A rollout needs at least one step."""
    with pytest.raises(errors.PolicyInputError, match="at least one step"):
        policy.log_prob_rollout(np.zeros(4), [])


def test_grad_log_prob_rollout_examples(policy):
    """Closed-form gradients at the zero parameter vector."""
    obs = StepObservation([1.0, 0.0, 0.0, 0.0], 1)
    np.testing.assert_allclose(
        policy.grad_log_prob_rollout(np.zeros(4), [obs]), [0.5, 0, 0, 0]
    )
    opposite = [obs, StepObservation([1.0, 0.0, 0.0, 0.0], 0)]
    np.testing.assert_array_equal(
        policy.grad_log_prob_rollout(np.zeros(4), opposite), np.zeros(4)
    )


@pytest.mark.parametrize("seed", range(5))
def test_derivatives_match_finite_differences(policy, seed):
    """Analytic gradient and Hessian match central differences."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-5, 5, size=4) / 4
    steps = _random_steps(rng, 4, 4)

    gradient = policy.grad_log_prob_rollout(theta, steps)
    numeric = _central_difference(
        lambda x: policy.log_prob_rollout(x, steps), theta
    )
    np.testing.assert_allclose(
        gradient, numeric, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(gradient).max())
    )

    hessian = policy.hessian_log_prob_rollout(theta, steps)
    numeric_hessian = _central_difference(
        lambda x: policy.grad_log_prob_rollout(x, steps), theta
    )
    np.testing.assert_allclose(
        hessian,
        numeric_hessian,
        rtol=1e-5,
        atol=1e-5 * max(1.0, np.abs(hessian).max()),
    )


def test_hessian_example_and_semidefinite(policy):
    """Curvature 1/4 at zero, and no positive eigenvalues anywhere."""
    obs = StepObservation([1.0, 0.0, 0.0, 0.0], 1)
    expected = np.zeros((4, 4))
    expected[0, 0] = -0.25
    np.testing.assert_allclose(
        policy.hessian_log_prob_rollout(np.zeros(4), [obs]), expected
    )

    rng = np.random.default_rng(3)
    for _ in range(20):
        hessian = policy.hessian_log_prob_rollout(
            rng.normal(scale=3, size=4), _random_steps(rng, 6, 4)
        )
        np.testing.assert_array_equal(hessian, hessian.T)
        assert np.linalg.eigvalsh(hessian).max() <= 1e-10


def test_batched_paths_match_single_rollouts(small_batch):
    """Flattened batch evaluation agrees exactly with per-rollout calls."""
    theta = np.array([-0.7, 1.3])
    policy = small_batch.policy
    np.testing.assert_array_equal(
        small_batch.log_probs(theta),
        [policy.log_prob_rollout(theta, r) for r in small_batch.rollouts],
    )
    np.testing.assert_array_equal(
        small_batch.grad_log_probs(theta),
        [policy.grad_log_prob_rollout(theta, r) for r in small_batch.rollouts],
    )
    weights = np.arange(1.0, len(small_batch) + 1)
    expected = sum(
        w * policy.hessian_log_prob_rollout(theta, r)
        for w, r in zip(weights, small_batch.rollouts)
    )
    np.testing.assert_allclose(
        small_batch.weighted_hessian(theta, weights), expected, atol=1e-12
    )


def test_sample_action_saturates_and_is_consistent(policy):
    """A huge logit always pushes right, with log-probability ~0."""
    rng = np.random.default_rng(0)
    state = [1.0, 0.0, 0.0, 0.0]
    theta = [1e3, 0.0, 0.0, 0.0]
    for _ in range(100):
        action, log_prob = policy.sample_action(theta, state, rng)
        assert action == 1
        assert log_prob == policy.log_prob_step(
            theta, StepObservation(state, action)
        )


def test_sample_action_is_reproducible(policy):
    """The same seed gives the same action sequence."""
    theta = [0.4, -0.3, 1.0, 0.2]
    state = [0.1, 0.2, -0.3, 0.05]

    def _draw(seed):
        rng = np.random.default_rng(seed)
        return [policy.sample_action(theta, state, rng) for _ in range(50)]

    assert _draw(42) == _draw(42)
    assert _draw(42) != _draw(43)


def test_draw_frequency_at_zero_logit():
    """Both actions are equally likely at logit 0."""
    policy = BernoulliLogisticPolicy(state_dim=1)
    rng = np.random.default_rng(2024)
    actions = [policy.draw(0.0, rng)[0] for _ in range(100_000)]
    assert np.mean(actions) == pytest.approx(0.5, abs=0.01)


@pytest.mark.parametrize(
    "theta, obs, match",
    [
        ([0.0, 0.0, 0.0], StepObservation([1.0, 0, 0, 0], 1), "dimension 3"),
        ([0.0] * 4, StepObservation([1.0, 0, 0], 1), "state has dimension"),
        ([0.0] * 4, StepObservation([1.0, 0, 0, 0], 2), "actions must be 0 or 1"),
        ([np.nan, 0, 0, 0], StepObservation([1.0, 0, 0, 0], 1), "non-finite"),
    ],
)
def test_invalid_inputs_rejected(policy, theta, obs, match):
    """Malformed parameters, states and actions raise PolicyInputError."""
    with pytest.raises(errors.PolicyInputError, match=match):
        policy.log_prob_step(theta, obs)


def test_bias_feature():
    """The bias option appends a constant feature and a parameter."""
    policy = BernoulliLogisticPolicy(state_dim=2, bias=True)
    assert policy.dim == 3
    np.testing.assert_array_equal(
        policy.featurize([[1.0, 2.0], [3.0, 4.0]]),
        [[1.0, 2.0, 1.0], [3.0, 4.0, 1.0]],
    )
    obs = StepObservation([0.0, 0.0], 1)
    value = policy.log_prob_step([0.0, 0.0, 2.0], obs)
    assert value == pytest.approx(-0.126928, abs=1e-6)


def test_policy_registry():
    """Families are looked up by their registered name."""
    policy = get_policy_family("bernoulli_logistic", 4, bias=True)
    assert policy == BernoulliLogisticPolicy(4, bias=True)
    assert policy != BernoulliLogisticPolicy(4)
    with pytest.raises(errors.PolicyInputError, match="unknown policy family"):
        get_policy_family("gaussian", 4)


def test_params_like(policy):
    """Parameter vectors are validated against the family dimension."""
    params = params_like(policy, (1, 2, 3, 4))
    assert params.dtype == np.float64
    np.testing.assert_array_equal(params, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(errors.PolicyInputError):
        params_like(policy, (1, 2))
