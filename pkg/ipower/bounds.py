"""Concave surrogates of the importance-sampled estimator.

For an anchor ``nu`` every rollout term of the estimator is replaced by a
function of ``theta`` that is tangent to it at ``nu``:

- nonnegative effective rewards use the log lower bound
  ``p(tau | nu) (1 + log p(tau | theta) - log p(tau | nu))``, concave when the
  policy is log-concave;
- negative effective rewards use the exponential upper bound
  ``u_nu(tau | theta) = p(tau | nu) exp[(theta - nu)^T g]`` with ``g`` the
  gradient of ``log p(tau | .)`` at ``nu``. The bound is convex, so its
  product with a negative reward is concave.

The effective reward is ``R + beta - b``: the control variate is what makes
negative values appear, so it decides the branch.
"""

import dataclasses
from collections import namedtuple
from enum import Enum
from typing import Any, Optional, Union

import numpy as np

from . import constants, errors
from .decorators import PolicyParams, as_params, check_params
from .estimator import EstimatorConfig, resolve_signal
from .trajectory import LoggedBatch, importance_weights

SurrogateEval = namedtuple("SurrogateEval", ["value", "gradient", "hessian"])


class BranchRule(Enum):
    """Which bound each rollout term uses."""

    #: log lower bound everywhere; needs nonnegative effective rewards.
    LOWER_ONLY = "lower_only"
    #: log lower bound for nonnegative, exponential bound for negative ones.
    MIXED = "mixed"


@dataclasses.dataclass(frozen=True)
class SurrogateSpec:
    """Definition of one surrogate.

    :param anchor: parameter ``nu`` at which the surrogate is tangent.
    :param estimator_config: cap, shift and control variate of the
        estimator being bounded.
    :param branch_rule: a :class:`BranchRule` or its string value.
    """

    anchor: Any
    estimator_config: EstimatorConfig = EstimatorConfig()
    branch_rule: Union[BranchRule, str] = BranchRule.MIXED

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_params(self.anchor, name="anchor"))
        try:
            object.__setattr__(self, "branch_rule", BranchRule(self.branch_rule))
        except ValueError as exc:
            raise errors.ConfigError(
                f"unknown branch rule {self.branch_rule!r}, available: "
                f"{[rule.value for rule in BranchRule]}"
            ) from exc


class Surrogate:
    """A surrogate bound, built once per anchor and evaluated at many points.

    Calling the object with a parameter vector returns a
    :class:`SurrogateEval`.
    """

    def __init__(
        self,
        batch: LoggedBatch,
        spec: SurrogateSpec,
        signal: Optional[np.ndarray] = None,
    ) -> None:
        """Precompute the anchor quantities.

        :param batch: logged rollouts.
        :param spec: anchor, estimator config and branch rule.
        :param signal: per-rollout values replacing the rewards.

        :raises NegativeRewardError: if the branch rule is lower-only and an
            effective reward is negative.
        :raises WeightOverflowError: if an anchor weight is not finite.
        """
        self.batch = batch
        self.spec = spec
        self.anchor = as_params(spec.anchor, batch.dim, name="anchor")
        config = spec.estimator_config
        self.offset = config.control_variate - config.reward_shift
        # same association as shift_for_positivity, so the shifted minimum is 0
        self.effective_rewards = (
            resolve_signal(batch, signal) - config.control_variate
        ) + config.reward_shift

        if spec.branch_rule is BranchRule.LOWER_ONLY:
            negative = np.flatnonzero(self.effective_rewards < 0)
            if negative.size:
                index = int(negative[0])
                raise errors.NegativeRewardError(
                    f"rollout {index} has negative effective reward "
                    f"{self.effective_rewards[index]!r}; shift the rewards or "
                    "use the mixed branch rule",
                    index=index,
                )
            self.lower_mask = np.ones(len(batch), dtype=bool)
        else:
            self.lower_mask = self.effective_rewards >= 0
        self.upper_mask = ~self.lower_mask

        self.anchor_log_probs = batch.log_probs(self.anchor)
        self.anchor_weights = importance_weights(
            batch, self.anchor, config.weight_cap
        )
        self.anchor_grads = batch.grad_log_probs(self.anchor)
        self.weighted_rewards = self.anchor_weights * self.effective_rewards

    def _exponents(self, theta: PolicyParams) -> np.ndarray:
        exponents = np.zeros(len(self.batch))
        if self.upper_mask.any():
            exponents[self.upper_mask] = np.sum(
                self.anchor_grads[self.upper_mask] * (theta - self.anchor),
                axis=1,
            )
            over = np.flatnonzero(exponents > constants.MAX_EXPONENT)
            if over.size:
                index = int(over[0])
                raise errors.BoundOverflowError(
                    f"exponential bound of rollout {index} overflows: exponent "
                    f"{exponents[index]!r} > {constants.MAX_EXPONENT}",
                    index=index,
                    exponent=float(exponents[index]),
                )
        return exponents

    def value(self, theta: PolicyParams) -> float:
        """Surrogate value only."""
        return self.evaluate(theta, derivatives=False).value

    def evaluate(
        self, theta: PolicyParams, derivatives: bool = True
    ) -> SurrogateEval:
        """Value, gradient and Hessian of the surrogate at ``theta``.

        :param theta: point of evaluation.
        :param derivatives: if False, gradient and Hessian are None.
        :raises BoundOverflowError: if an exponential term overflows.
        """
        theta = as_params(theta, self.batch.dim)
        n_rollouts = len(self.batch)
        exponents = self._exponents(theta)
        upper_factors = np.exp(exponents)
        log_probs = self.batch.log_probs(theta)
        z = np.where(
            self.lower_mask,
            1.0 + (log_probs - self.anchor_log_probs),
            upper_factors,
        )
        value = float(np.mean(self.weighted_rewards * z) + self.offset)
        if not derivatives:
            return SurrogateEval(value, None, None)

        lower_coefs = np.where(self.lower_mask, self.weighted_rewards, 0.0)
        upper_coefs = np.where(
            self.upper_mask, self.weighted_rewards * upper_factors, 0.0
        )
        gradient = (
            lower_coefs @ self.batch.grad_log_probs(theta)
            + upper_coefs @ self.anchor_grads
        ) / n_rollouts
        hessian = self.batch.weighted_hessian(theta, lower_coefs / n_rollouts)
        if self.upper_mask.any():
            # rank-one terms g g^T scaled by negative coefficients
            grads = self.anchor_grads
            hessian = hessian + (grads * (upper_coefs / n_rollouts)[:, None]).T @ grads
        hessian = 0.5 * (hessian + hessian.T)
        return SurrogateEval(value, gradient, hessian)

    def __call__(self, theta: PolicyParams) -> SurrogateEval:
        return self.evaluate(theta)


def build_surrogate(
    batch: LoggedBatch,
    spec: SurrogateSpec,
    signal: Optional[np.ndarray] = None,
) -> Surrogate:
    """Build the surrogate described by ``spec``."""
    return Surrogate(batch, spec, signal)


@check_params("theta")
def lower_bound_eval(
    batch: LoggedBatch, spec: SurrogateSpec, theta: PolicyParams
) -> SurrogateEval:
    """Evaluate the log lower bound of the estimator anchored at ``spec.anchor``.

    Every rollout uses the log branch regardless of ``spec.branch_rule``.

    :raises NegativeRewardError: if an effective reward is negative.
    """
    spec = dataclasses.replace(spec, branch_rule=BranchRule.LOWER_ONLY)
    return Surrogate(batch, spec).evaluate(theta)


@check_params("theta")
def mixed_bound_eval(
    batch: LoggedBatch, spec: SurrogateSpec, theta: PolicyParams
) -> SurrogateEval:
    """Evaluate the mixed bound, valid for rewards of any sign.

    :raises BoundOverflowError: if an exponential term overflows.
    """
    spec = dataclasses.replace(spec, branch_rule=BranchRule.MIXED)
    return Surrogate(batch, spec).evaluate(theta)


@check_params("theta")
def power_bound_eval(
    batch: LoggedBatch, estimator_config: EstimatorConfig, theta: PolicyParams
) -> SurrogateEval:
    """The lower bound anchored at the logging parameters.

    This is the objective maximized by a single PoWER update.
    """
    spec = SurrogateSpec(
        batch.logging_params, estimator_config, BranchRule.LOWER_ONLY
    )
    return lower_bound_eval(batch, spec, theta)


@check_params("anchor", "theta")
def upper_bound_factor(
    batch: LoggedBatch, anchor: PolicyParams, index: int, theta: PolicyParams
) -> float:
    """``u_nu(tau_i | theta) / p(tau_i | nu) = exp[(theta - nu)^T g_i]``.

    :raises BoundOverflowError: if the exponent exceeds the overflow limit.
    """
    if not 0 <= index < len(batch):
        raise IndexError(
            f"rollout index {index} out of range for batch of size {len(batch)}"
        )
    rollout = batch.rollouts[index]
    grad = batch.policy.grad_log_prob_rollout(anchor, rollout)
    exponent = float(np.sum(grad * (theta - anchor)))
    if exponent > constants.MAX_EXPONENT:
        raise errors.BoundOverflowError(
            f"exponential bound of rollout {index} overflows: exponent "
            f"{exponent!r} > {constants.MAX_EXPONENT}",
            index=index,
            exponent=exponent,
        )
    return float(np.exp(exponent))


@check_params("anchor", "theta")
def shift_gap(
    batch: LoggedBatch,
    anchor: PolicyParams,
    beta: float,
    theta: PolicyParams,
    weight_cap: Optional[float] = None,
) -> float:
    """Change of the lower bound caused by shifting every reward by ``beta``.

    Equals ``beta * (1/N sum_i w_i^nu (1 + log p(tau_i|theta) - log p(tau_i|nu))
    - beta``, a Monte-Carlo estimate of ``-beta * KL(p(.|nu) || p(.|theta))``.
    """
    if not beta >= 0:
        raise errors.ConfigError(f"beta must be nonnegative, found {beta}")
    weights = importance_weights(batch, anchor, weight_cap)
    z = 1.0 + (batch.log_probs(theta) - batch.log_probs(anchor))
    return float(beta * (np.mean(weights * z) - 1.0))


def check_concavity(
    evaluation: SurrogateEval, tolerance: float = constants.CONCAVITY_TOLERANCE
) -> float:
    """Spot-check that a surrogate Hessian is negative semidefinite.

    :returns: the largest eigenvalue of the Hessian.
    :raises NonConcaveSurrogateError: if it exceeds ``tolerance * ||H||``.
    """
    hessian = np.asarray(evaluation.hessian)
    max_eigenvalue = float(np.linalg.eigvalsh(hessian).max())
    scale = float(np.linalg.norm(hessian))
    if max_eigenvalue > tolerance * max(scale, np.finfo(float).tiny):
        raise errors.NonConcaveSurrogateError(
            f"surrogate Hessian has eigenvalue {max_eigenvalue!r} > "
            f"{tolerance} * ||H|| = {tolerance * scale!r}"
        )
    return max_eigenvalue
