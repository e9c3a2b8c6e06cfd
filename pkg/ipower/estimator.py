"""Importance-weighted expected-reward estimator and control variates.

The estimator of the expected return of ``theta`` from rollouts logged
under ``theta_0`` is

    j_hat(theta) = 1/N sum_i w_i(theta) (R_i + beta - b) + b - beta

where ``w_i`` is the (optionally capped) importance weight, ``beta`` a
reward shift and ``b`` a control variate. Both constants leave the
estimator unbiased because importance weights have unit expectation.
Reductions use numpy's pairwise summation in a fixed order.
"""

from collections import namedtuple
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import errors
from .decorators import PolicyParams, check_params
from .trajectory import LoggedBatch, importance_weights

ControlVariate = namedtuple("ControlVariate", ["value", "degenerate"])


@dataclass(frozen=True)
class EstimatorConfig:
    """Constants shaping the estimator.

    :param weight_cap: cap applied to every importance weight, or None.
    :param reward_shift: shift ``beta`` added to every reward.
    :param control_variate: fixed control variate ``b``, used when
        ``cv_fraction`` is 0.
    :param cv_fraction: when positive, the control variate is this fraction
        of the variance-minimizing one, recomputed at each anchor.
    """

    weight_cap: Optional[float] = None
    reward_shift: float = 0.0
    control_variate: float = 0.0
    cv_fraction: float = 0.0

    def __post_init__(self):
        if self.weight_cap is not None and not self.weight_cap > 0:
            raise errors.ConfigError(
                f"weight_cap must be positive or None, found {self.weight_cap}"
            )
        if not 0.0 <= self.cv_fraction <= 1.0:
            raise errors.ConfigError(
                f"cv_fraction must be in [0, 1], found {self.cv_fraction}"
            )
        for name in ("reward_shift", "control_variate"):
            if not np.isfinite(getattr(self, name)):
                raise errors.ConfigError(f"{name} must be finite")


def resolve_signal(
    batch: LoggedBatch, signal: Optional[np.ndarray] = None
) -> np.ndarray:
    """Per-rollout values entering the estimator: ``signal`` or the rewards."""
    if signal is None:
        return batch.rewards
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape != batch.rewards.shape:
        raise errors.BatchInitError(
            f"signal has shape {signal.shape}, expected {batch.rewards.shape}"
        )
    return signal


def _effective(rewards: np.ndarray, config: EstimatorConfig) -> np.ndarray:
    return (rewards - config.control_variate) + config.reward_shift


@check_params("eval_params")
def estimator_terms(
    batch: LoggedBatch,
    eval_params: PolicyParams,
    config: EstimatorConfig,
    signal: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-rollout terms whose mean is :func:`j_hat`.

    :param signal: per-rollout values replacing the rewards, e.g. the aux
        signal of a constraint.
    """
    rewards = resolve_signal(batch, signal)
    weights = importance_weights(batch, eval_params, config.weight_cap)
    offset = config.control_variate - config.reward_shift
    return weights * _effective(rewards, config) + offset


@check_params("eval_params")
def j_hat(
    batch: LoggedBatch,
    eval_params: PolicyParams,
    config: EstimatorConfig,
    signal: Optional[np.ndarray] = None,
) -> float:
    """Importance-sampled estimate of the expected return of ``eval_params``.

    :param batch: rollouts logged under ``batch.logging_params``.
    :param eval_params: parameters to evaluate.
    :param config: weight cap, reward shift and control variate.
    :param signal: per-rollout values replacing the rewards.
    :raises WeightOverflowError: if an importance weight is not finite.

    :example:

    >>> import numpy as np
    >>> from ipower.policy import BernoulliLogisticPolicy
    >>> from ipower.trajectory import LoggedBatch, Rollout
    >>> from ipower.estimator import EstimatorConfig, j_hat
    >>> policy = BernoulliLogisticPolicy(state_dim=1)
    >>> rollouts = [
    ...     Rollout.from_policy(policy, [0.0], [[1.0]], [a], reward=r)
    ...     for a, r in [(1, 1.0), (0, 3.0)]
    ... ]
    >>> batch = LoggedBatch(rollouts, [0.0], policy)
    >>> j_hat(batch, [0.0], EstimatorConfig())
    2.0
    """
    rewards = resolve_signal(batch, signal)
    weights = importance_weights(batch, eval_params, config.weight_cap)
    offset = config.control_variate - config.reward_shift
    return float(np.mean(weights * _effective(rewards, config)) + offset)


@check_params("eval_params")
def estimator_variance(
    batch: LoggedBatch,
    eval_params: PolicyParams,
    config: EstimatorConfig,
    signal: Optional[np.ndarray] = None,
) -> float:
    """Sample variance (n-1 normalization) of the estimator terms."""
    terms = estimator_terms(batch, eval_params, config, signal)
    if terms.size < 2:
        return 0.0
    return float(np.var(terms, ddof=1))


@check_params("eval_params")
def optimal_control_variate(
    batch: LoggedBatch,
    eval_params: PolicyParams,
    weight_cap: Optional[float] = None,
    reward_shift: float = 0.0,
    signal: Optional[np.ndarray] = None,
) -> ControlVariate:
    """Control variate minimizing the sample variance of the estimator terms.

    ``b* = Cov(w (R + beta), w) / Var(w)`` with n-1 normalization, computed
    from the capped weights since those enter the estimator.

    :returns: ``ControlVariate(value, degenerate)``. When there are fewer than
        two rollouts or the weights have zero variance the value is 0 and
        ``degenerate`` is True.
    """
    rewards = resolve_signal(batch, signal) + reward_shift
    weights = importance_weights(batch, eval_params, weight_cap)
    if weights.size < 2:
        return ControlVariate(0.0, True)
    weight_var = np.var(weights, ddof=1)
    if not weight_var > 0:
        return ControlVariate(0.0, True)
    weighted = weights * rewards
    covariance = np.sum(
        (weighted - np.mean(weighted)) * (weights - np.mean(weights))
    ) / (weights.size - 1)
    return ControlVariate(float(covariance / weight_var), False)


def shift_for_positivity(
    batch: LoggedBatch,
    current_b: float = 0.0,
    signal: Optional[np.ndarray] = None,
) -> float:
    """Smallest shift ``beta >= 0`` making every ``R_i + beta - b`` nonnegative."""
    rewards = resolve_signal(batch, signal)
    return float(max(0.0, -np.min(rewards - current_b)))


@check_params("anchor")
def resolve_control_variate(
    batch: LoggedBatch,
    anchor: PolicyParams,
    config: EstimatorConfig,
    signal: Optional[np.ndarray] = None,
) -> ControlVariate:
    """Control variate in effect at ``anchor``.

    ``cv_fraction * b*(anchor)`` when ``cv_fraction`` is positive, otherwise
    the fixed ``config.control_variate``.
    """
    if config.cv_fraction > 0:
        optimal = optimal_control_variate(
            batch, anchor, config.weight_cap, config.reward_shift, signal
        )
        return ControlVariate(
            config.cv_fraction * optimal.value, optimal.degenerate
        )
    return ControlVariate(config.control_variate, False)
