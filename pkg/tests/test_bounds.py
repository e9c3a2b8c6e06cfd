"""Tests for the concave surrogate bounds."""

import numpy as np
import pytest

from ipower import errors
from ipower.bounds import (
    BranchRule,
    Surrogate,
    SurrogateEval,
    SurrogateSpec,
    build_surrogate,
    check_concavity,
    lower_bound_eval,
    mixed_bound_eval,
    power_bound_eval,
    shift_gap,
    upper_bound_factor,
)
from ipower.estimator import EstimatorConfig, j_hat
from ipower.policy import BernoulliLogisticPolicy
from ipower.trajectory import LoggedBatch, Rollout, importance_weights


def _central_difference(fn, x, h=1e-5):
    return np.array(
        [
            (fn(x + h * e) - fn(x - h * e)) / (2 * h)
            for e in np.eye(x.size)
        ]
    )


def _random_points(seed, dim, n, radius=5.0):
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * rng.uniform(0, radius, size=(n, 1))


def test_surrogate_spec_coercion():
    """Anchors become parameter vectors and branch rules accept strings."""
    spec = SurrogateSpec([1, 2], branch_rule="lower_only")
    assert spec.branch_rule is BranchRule.LOWER_ONLY
    assert spec.anchor.dtype == np.float64
    assert SurrogateSpec([0.0]).branch_rule is BranchRule.MIXED
    with pytest.raises(errors.ConfigError, match="unknown branch rule"):
        SurrogateSpec([0.0], branch_rule="upper_only")
    with pytest.raises(errors.PolicyInputError):
        SurrogateSpec([np.inf])


@pytest.mark.parametrize(
    "config",
    [
        EstimatorConfig(),
        EstimatorConfig(weight_cap=1.5),
        EstimatorConfig(reward_shift=0.3, control_variate=0.8),
    ],
)
def test_tangent_at_anchor(small_batch, config):
    """The surrogate equals the estimator at its anchor."""
    anchor = np.array([0.5, -1.0])
    evaluation = mixed_bound_eval(small_batch, SurrogateSpec(anchor, config), anchor)
    assert evaluation.value == pytest.approx(
        j_hat(small_batch, anchor, config), abs=1e-12
    )


def test_gradient_at_anchor_matches_estimator(small_batch):
    """The surrogate gradient at the anchor is the estimator gradient."""
    anchor = np.array([0.5, -1.0])
    config = EstimatorConfig(control_variate=0.4)
    evaluation = mixed_bound_eval(small_batch, SurrogateSpec(anchor, config), anchor)
    numeric = _central_difference(
        lambda x: j_hat(small_batch, x, config), anchor
    )
    np.testing.assert_allclose(evaluation.gradient, numeric, rtol=1e-4, atol=1e-9)


def test_power_bound_at_logging_params(positive_batch):
    """Mean reward and the policy gradient at the logging parameters."""
    theta0 = positive_batch.logging_params
    evaluation = power_bound_eval(positive_batch, EstimatorConfig(), theta0)
    assert evaluation.value == pytest.approx(
        np.mean(positive_batch.rewards), abs=1e-15
    )
    reinforce = (
        positive_batch.rewards @ positive_batch.grad_log_probs(theta0)
    ) / len(positive_batch)
    np.testing.assert_allclose(evaluation.gradient, reinforce, atol=1e-15)


def test_power_bound_is_lower_bound_at_logging_params(positive_batch):
    theta = np.array([0.8, -0.6, 0.2])
    config = EstimatorConfig()
    power = power_bound_eval(positive_batch, config, theta)
    lower = lower_bound_eval(
        positive_batch,
        SurrogateSpec(positive_batch.logging_params, config),
        theta,
    )
    assert power.value == lower.value
    np.testing.assert_array_equal(power.gradient, lower.gradient)
    np.testing.assert_array_equal(power.hessian, lower.hessian)


def test_power_bound_one_dimensional_curve():
    """A single rollout with R = 1 traces 1 + log sigma(theta) - log sigma(0)."""
    policy = BernoulliLogisticPolicy(state_dim=1)
    rollout = Rollout.from_policy(policy, [0.0], [[1.0]], [1], reward=1.0)
    batch = LoggedBatch([rollout], [0.0], policy)
    grid = np.linspace(-4, 4, 17)
    values = [power_bound_eval(batch, EstimatorConfig(), [t]).value for t in grid]
    expected = 1 - np.log1p(np.exp(-grid)) + np.log(2.0)
    np.testing.assert_allclose(values, expected, atol=1e-12)
    # concave along the grid
    assert np.all(np.diff(values, 2) <= 1e-12)


def test_lower_bound_term_by_term(small_batch):
    """The lower bound matches a direct transcription of its formula."""
    nu = np.array([0.2, 0.1])
    theta = np.array([-1.0, 1.5])
    beta, b = 1.5, 0.2
    config = EstimatorConfig(reward_shift=beta, control_variate=b)
    policy = small_batch.policy
    terms = []
    for rollout in small_batch.rollouts:
        log_theta = policy.log_prob_rollout(theta, rollout)
        log_nu = policy.log_prob_rollout(nu, rollout)
        weight = np.exp(log_nu - rollout.log_prob_logging)
        terms.append(
            (rollout.reward + beta - b) * weight * (1 + log_theta - log_nu)
        )
    expected = np.mean(terms) + b - beta
    value = lower_bound_eval(small_batch, SurrogateSpec(nu, config), theta).value
    assert value == pytest.approx(expected, abs=1e-12)


def test_lower_only_rejects_negative_effective_reward(small_batch):
    """The log bound needs nonnegative effective rewards."""
    with pytest.raises(errors.NegativeRewardError) as excinfo:
        lower_bound_eval(small_batch, SurrogateSpec([0.0, 0.0]), [0.0, 0.0])
    assert excinfo.value.index == 1

    # the control variate decides the sign, not the raw reward
    shifted = SurrogateSpec([0.0, 0.0], EstimatorConfig(reward_shift=1.0))
    lower_bound_eval(small_batch, shifted, [0.3, 0.3])
    with pytest.raises(errors.NegativeRewardError):
        lower_bound_eval(
            small_batch,
            SurrogateSpec(
                [0.0, 0.0], EstimatorConfig(reward_shift=1.0, control_variate=0.1)
            ),
            [0.0, 0.0],
        )


def test_mixed_equals_lower_for_nonnegative_rewards(positive_batch):
    nu = np.array([0.3, 0.3, -0.1])
    spec = SurrogateSpec(nu, EstimatorConfig())
    for theta in _random_points(0, 3, 10):
        mixed = mixed_bound_eval(positive_batch, spec, theta)
        lower = lower_bound_eval(positive_batch, spec, theta)
        assert mixed.value == lower.value
        np.testing.assert_array_equal(mixed.gradient, lower.gradient)


@pytest.mark.parametrize("fixture", ["small_batch", "positive_batch"])
def test_dominance(request, fixture):
    """Without capping the surrogate never exceeds the estimator."""
    batch = request.getfixturevalue(fixture)
    config = EstimatorConfig()
    for k, theta in enumerate(_random_points(1, batch.dim, 100)):
        nu = _random_points(100 + k, batch.dim, 1, radius=2.0)[0]
        value = mixed_bound_eval(batch, SurrogateSpec(nu, config), theta).value
        estimate = j_hat(batch, theta, config)
        assert value <= estimate + 1e-10 * max(1.0, abs(estimate))


def test_dominance_two_sign_batch(bandit):
    """Rewards (+1, -1) on a scalar bandit."""
    batch = bandit([(1.0, 1, 1.0), (-0.5, 0, -1.0)])
    config = EstimatorConfig()
    spec = SurrogateSpec([0.4], config)
    for theta in np.linspace(-5, 5, 101):
        value = mixed_bound_eval(batch, spec, [theta]).value
        assert value <= j_hat(batch, [theta], config) + 1e-12


def test_surrogate_derivatives_match_finite_differences(small_batch):
    """Gradient and Hessian of the mixed surrogate are exact."""
    nu = np.array([0.5, -0.5])
    surrogate = build_surrogate(
        small_batch, SurrogateSpec(nu, EstimatorConfig(control_variate=0.3))
    )
    assert surrogate.upper_mask.any() and surrogate.lower_mask.any()
    for theta in _random_points(2, 2, 5, radius=2.0):
        evaluation = surrogate(theta)
        gradient = _central_difference(surrogate.value, theta)
        scale = max(1.0, np.abs(evaluation.gradient).max())
        np.testing.assert_allclose(
            evaluation.gradient, gradient, rtol=1e-5, atol=1e-5 * scale
        )
        hessian = _central_difference(
            lambda x: surrogate(x).gradient, theta
        )
        scale = max(1.0, np.abs(evaluation.hessian).max())
        np.testing.assert_allclose(
            evaluation.hessian, hessian, rtol=1e-5, atol=1e-5 * scale
        )


def test_surrogate_is_concave(small_batch):
    """Hessian spectrum and midpoint checks."""
    surrogate = Surrogate(
        small_batch, SurrogateSpec([0.1, 0.2], EstimatorConfig(control_variate=0.5))
    )
    points = _random_points(3, 2, 40, radius=2.0)
    for x, y in zip(points[:20], points[20:]):
        evaluation = surrogate(x)
        np.testing.assert_array_equal(evaluation.hessian, evaluation.hessian.T)
        assert check_concavity(evaluation) <= 1e-8 * np.linalg.norm(
            evaluation.hessian
        )
        midpoint = surrogate.value((x + y) / 2)
        chord = (surrogate.value(x) + surrogate.value(y)) / 2
        assert midpoint >= chord - 1e-10 * max(1.0, abs(chord))


def test_check_concavity_rejects_convex():
    evaluation = SurrogateEval(0.0, np.zeros(2), np.diag([1.0, -2.0]))
    with pytest.raises(errors.NonConcaveSurrogateError, match="eigenvalue"):
        check_concavity(evaluation)
    assert check_concavity(
        SurrogateEval(0.0, np.zeros(2), np.diag([-1.0, -2.0]))
    ) == pytest.approx(-1.0)


def test_derivatives_can_be_skipped(small_batch):
    surrogate = Surrogate(small_batch, SurrogateSpec([0.0, 0.0]))
    evaluation = surrogate.evaluate([0.3, 0.3], derivatives=False)
    assert evaluation.gradient is None and evaluation.hessian is None
    assert evaluation.value == surrogate([0.3, 0.3]).value


def test_upper_bound_factor(small_batch):
    """exp[(theta - nu)^T g] is 1 at the anchor and dominates p(theta)/p(nu)."""
    nu = np.array([0.4, -0.2])
    for index in range(len(small_batch)):
        assert upper_bound_factor(small_batch, nu, index, nu) == 1.0
    for theta in _random_points(4, 2, 50):
        for index in range(len(small_batch)):
            ratio = np.exp(
                small_batch.log_probs(theta)[index]
                - small_batch.log_probs(nu)[index]
            )
            factor = upper_bound_factor(small_batch, nu, index, theta)
            assert factor >= ratio * (1 - 1e-12)


def test_upper_bound_factor_flat_gradient():
    """A rollout with zero score at the anchor has a flat bound."""
    policy = BernoulliLogisticPolicy(state_dim=1)
    rollout = Rollout.from_policy(policy, [0.0], [[1.0], [1.0]], [1, 0], -1.0)
    batch = LoggedBatch([rollout], [0.0], policy)
    for theta in [-3.0, 0.5, 8.0]:
        assert upper_bound_factor(batch, [0.0], 0, [theta]) == 1.0


@pytest.mark.parametrize("index", [-1, 5])
def test_upper_bound_factor_index_range(small_batch, index):
    with pytest.raises(IndexError, match="out of range"):
        upper_bound_factor(small_batch, [0.0, 0.0], index, [0.0, 0.0])


def test_upper_bound_overflow(bandit):
    """Exponents above the limit are an error, not a silent clip."""
    batch = bandit([(1.0, 1, -1.0)])
    with pytest.raises(errors.BoundOverflowError) as excinfo:
        upper_bound_factor(batch, [0.0], 0, [1500.0])
    assert excinfo.value.index == 0
    assert excinfo.value.exponent == pytest.approx(750.0)
    with pytest.raises(errors.BoundOverflowError):
        mixed_bound_eval(batch, SurrogateSpec([0.0]), [1500.0])
    # the exponent is negative in the other direction
    assert mixed_bound_eval(batch, SurrogateSpec([0.0]), [-1500.0]).value == 0.0


def test_shift_gap_identity(positive_batch):
    """shift_gap is the difference of shifted and unshifted lower bounds."""
    theta = np.array([0.5, 1.0, -0.7])
    nu = np.array([-0.2, 0.4, 0.1])
    for beta in [0.0, 0.3, 2.5]:
        shifted = lower_bound_eval(
            positive_batch,
            SurrogateSpec(nu, EstimatorConfig(reward_shift=beta)),
            theta,
        ).value
        unshifted = lower_bound_eval(
            positive_batch, SurrogateSpec(nu, EstimatorConfig()), theta
        ).value
        gap = shift_gap(positive_batch, nu, beta, theta)
        assert shifted - unshifted == pytest.approx(gap, abs=1e-10)


def test_shift_gap_edge_cases(positive_batch):
    theta0 = positive_batch.logging_params
    assert shift_gap(positive_batch, theta0, 1.3, theta0) == 0.0
    assert shift_gap(positive_batch, [0.1, 0.2, 0.3], 0.0, [1.0, -1.0, 0.0]) == 0.0
    # anchored at the logging policy the gap is the mean log-likelihood ratio
    theta = theta0 + np.array([0.5, -0.5, 0.5])
    assert np.all(importance_weights(positive_batch, theta0) == 1.0)
    log_ratios = positive_batch.log_probs(theta) - positive_batch.log_probs(theta0)
    assert shift_gap(positive_batch, theta0, 2.0, theta) == pytest.approx(
        2.0 * np.mean(log_ratios), abs=1e-12
    )
    with pytest.raises(errors.ConfigError, match="beta"):
        shift_gap(positive_batch, theta0, -0.1, theta0)


def test_shift_gap_at_moved_anchor(positive_batch):
    """At theta = nu away from the logging parameters the gap is set by w^nu."""
    nu = positive_batch.logging_params + np.array([0.3, -0.4, 0.2])
    mean_weight = np.mean(importance_weights(positive_batch, nu))
    assert mean_weight != 1.0
    for beta in [0.5, 2.0]:
        gap = shift_gap(positive_batch, nu, beta, nu)
        assert gap == beta * (mean_weight - 1.0)
        shifted = lower_bound_eval(
            positive_batch,
            SurrogateSpec(nu, EstimatorConfig(reward_shift=beta)),
            nu,
        ).value
        unshifted = lower_bound_eval(
            positive_batch, SurrogateSpec(nu, EstimatorConfig()), nu
        ).value
        assert shifted - unshifted == pytest.approx(gap, abs=1e-10)
