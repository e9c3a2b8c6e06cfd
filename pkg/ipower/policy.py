"""Log-concave stochastic policy families.

A policy family maps a parameter vector ``theta`` and a state to a
distribution over discrete actions. The bound machinery only ever needs the
log-probability of logged actions, its gradient and its Hessian, summed over
the steps of a rollout, so that is what a family provides.

Rollout probabilities are represented by their policy part only,
``sum_t log pi(a_t | s_t, theta)``: the dynamics terms are the same at every
``theta`` and cancel in every probability ratio used by the library.

All batched methods work on a flattened batch: the features of all steps
stacked into one ``(M, dim)`` array, the actions as an ``(M,)`` array and
``offsets`` holding the first row of every rollout.
"""

import abc
from collections import namedtuple
from typing import Any, Dict, Iterable, Sequence, Tuple, Type, Union

import numpy as np
from scipy.special import expit, log_expit

from . import errors
from .decorators import PolicyParams, as_params, check_params

StepObservation = namedtuple("StepObservation", ["state", "action"])

StepsInput = Union[Sequence[StepObservation], Any]


def segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum consecutive row blocks of ``values`` starting at ``offsets``.

    Every block must be non-empty. A single rollout is the block starting at
    row 0, so per-rollout and batched results are computed identically.
    """
    return np.add.reduceat(values, offsets, axis=0)


class PolicyFamily(abc.ABC):
    """Base class of log-concave policy families."""

    #: registry name written into batch file headers.
    name: str = ""

    def __init__(self, state_dim: int) -> None:
        if int(state_dim) < 1:
            raise errors.PolicyInputError(
                f"state_dim must be >= 1, found {state_dim}"
            )
        self.state_dim = int(state_dim)

    @property
    def dim(self) -> int:
        """Dimension of the parameter vector."""
        return self.state_dim

    @property
    def options(self) -> Dict[str, Any]:
        """Constructor options, serialized next to the family name."""
        return {}

    def __eq__(self, other) -> bool:
        return (
            type(self) is type(other)
            and self.state_dim == other.state_dim
            and self.options == other.options
        )

    def __repr__(self) -> str:
        opts = "".join(f", {k}={v!r}" for k, v in self.options.items())
        return f"{type(self).__name__}(state_dim={self.state_dim}{opts})"

    def featurize(self, states: np.ndarray) -> np.ndarray:
        """Map raw states (rows) to policy features."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states.reshape(1, -1)
        if states.shape[1] != self.state_dim:
            raise errors.PolicyInputError(
                f"state has dimension {states.shape[1]}, "
                f"expected {self.state_dim}"
            )
        return states

    @abc.abstractmethod
    def check_actions(self, actions: np.ndarray) -> np.ndarray:
        """Validate actions and return them as an integer array."""

    @abc.abstractmethod
    def step_log_probs(
        self, theta: PolicyParams, features: np.ndarray, actions: np.ndarray
    ) -> np.ndarray:
        """Per-step ``log pi(a_t | s_t, theta)``."""

    @abc.abstractmethod
    def step_scores(
        self, theta: PolicyParams, features: np.ndarray, actions: np.ndarray
    ) -> np.ndarray:
        """Per-step gradients of the log-probability, one row per step."""

    @abc.abstractmethod
    def weighted_step_hessian(
        self,
        theta: PolicyParams,
        features: np.ndarray,
        actions: np.ndarray,
        step_weights: np.ndarray,
    ) -> np.ndarray:
        """``sum_t step_weights[t] * Hessian_t`` of the per-step log-probs."""

    @abc.abstractmethod
    def draw(self, logit: float, rng: np.random.Generator) -> Tuple[int, float]:
        """Draw one action given the pre-computed policy logit."""

    def _rollout_arrays(self, steps: StepsInput) -> Tuple[np.ndarray, np.ndarray]:
        """Features and actions of a rollout-like input."""
        if hasattr(steps, "states") and hasattr(steps, "actions"):
            states, actions = steps.states, steps.actions
        else:
            steps = list(steps)
            if not steps:
                raise errors.PolicyInputError("a rollout needs at least one step")
            states = np.array([np.atleast_1d(s.state) for s in steps])
            actions = np.array([s.action for s in steps])
        features = self.featurize(states)
        actions = self.check_actions(actions)
        if features.shape[0] == 0 or features.shape[0] != actions.shape[0]:
            raise errors.PolicyInputError(
                f"rollout has {features.shape[0]} states and "
                f"{actions.shape[0]} actions"
            )
        return features, actions

    @check_params("params")
    def log_prob_step(self, params: PolicyParams, obs: StepObservation) -> float:
        """Log-probability of one logged action.

        :param params: policy parameters.
        :param obs: the (state, action) pair.
        :returns: ``log pi(action | state, params)``.
        """
        features, actions = self._rollout_arrays([obs])
        return float(self.step_log_probs(params, features, actions)[0])

    @check_params("params")
    def log_prob_rollout(self, params: PolicyParams, steps: StepsInput) -> float:
        """Policy part of the rollout log-probability.

        :param params: policy parameters.
        :param steps: sequence of :class:`StepObservation`, or any object with
            ``states`` and ``actions`` arrays such as a rollout.
        """
        features, actions = self._rollout_arrays(steps)
        step_lp = self.step_log_probs(params, features, actions)
        return float(segment_sum(step_lp, np.zeros(1, dtype=np.intp))[0])

    @check_params("params")
    def grad_log_prob_rollout(
        self, params: PolicyParams, steps: StepsInput
    ) -> np.ndarray:
        """Gradient of :meth:`log_prob_rollout` with respect to ``params``."""
        features, actions = self._rollout_arrays(steps)
        scores = self.step_scores(params, features, actions)
        return segment_sum(scores, np.zeros(1, dtype=np.intp))[0]

    @check_params("params")
    def hessian_log_prob_rollout(
        self, params: PolicyParams, steps: StepsInput
    ) -> np.ndarray:
        """Hessian of :meth:`log_prob_rollout`; negative semidefinite."""
        features, actions = self._rollout_arrays(steps)
        return self.weighted_step_hessian(
            params, features, actions, np.ones(features.shape[0])
        )

    @check_params("params")
    def sample_action(
        self, params: PolicyParams, state: Any, rng: np.random.Generator
    ) -> Tuple[int, float]:
        """Draw an action from the policy.

        :param params: policy parameters.
        :param state: raw state vector.
        :param rng: caller-owned random generator, advanced by one draw.
        :returns: the action and its log-probability.
        """
        features = self.featurize(state)
        return self.draw(float(np.sum(features[0] * params)), rng)

    def log_prob_rollouts(
        self,
        theta: PolicyParams,
        features: np.ndarray,
        actions: np.ndarray,
        offsets: np.ndarray,
    ) -> np.ndarray:
        """Rollout log-probabilities of a flattened batch, shape ``(N,)``."""
        return segment_sum(self.step_log_probs(theta, features, actions), offsets)

    def grad_log_prob_rollouts(
        self,
        theta: PolicyParams,
        features: np.ndarray,
        actions: np.ndarray,
        offsets: np.ndarray,
    ) -> np.ndarray:
        """Rollout gradients of a flattened batch, shape ``(N, dim)``."""
        return segment_sum(self.step_scores(theta, features, actions), offsets)

    def weighted_hessian(
        self,
        theta: PolicyParams,
        features: np.ndarray,
        actions: np.ndarray,
        lengths: np.ndarray,
        rollout_weights: np.ndarray,
    ) -> np.ndarray:
        """``sum_i rollout_weights[i] * Hessian_i`` over a flattened batch."""
        step_weights = np.repeat(rollout_weights, lengths)
        return self.weighted_step_hessian(theta, features, actions, step_weights)


class BernoulliLogisticPolicy(PolicyFamily):
    """Binary actions with ``P(a=1 | s) = sigmoid(x(s)^T theta)``.

    ``x(s)`` is the raw state, followed by a constant 1 when ``bias`` is set.
    The rollout log-probability is a sum of concave functions of ``theta``,
    hence log-concave.

    :example:

    >>> import numpy as np
    >>> from ipower.policy import BernoulliLogisticPolicy, StepObservation
    >>> policy = BernoulliLogisticPolicy(state_dim=4)
    >>> obs = StepObservation(state=[1.0, 0.0, 0.0, 0.0], action=1)
    >>> round(policy.log_prob_step([2.0, 0.0, 0.0, 0.0], obs), 6)
    -0.126928
    """

    name = "bernoulli_logistic"

    def __init__(self, state_dim: int, bias: bool = False) -> None:
        super().__init__(state_dim)
        self.bias = bool(bias)

    @property
    def dim(self) -> int:
        return self.state_dim + int(self.bias)

    @property
    def options(self) -> Dict[str, Any]:
        return {"bias": self.bias}

    def featurize(self, states: np.ndarray) -> np.ndarray:
        features = super().featurize(states)
        if self.bias:
            features = np.hstack([features, np.ones((features.shape[0], 1))])
        return features

    def check_actions(self, actions: np.ndarray) -> np.ndarray:
        actions = np.atleast_1d(np.asarray(actions))
        if not np.all((actions == 0) | (actions == 1)):
            raise errors.PolicyInputError(
                f"actions must be 0 or 1, found {np.unique(actions)}"
            )
        return actions.astype(np.int64)

    @staticmethod
    def logits(theta: PolicyParams, features: np.ndarray) -> np.ndarray:
        """Row-wise ``x_t^T theta``."""
        # row-wise sums keep every logit independent of the batch layout
        return np.sum(features * theta, axis=1)

    def step_log_probs(self, theta, features, actions):
        logits = self.logits(theta, features)
        return log_expit(np.where(actions == 1, logits, -logits))

    def step_scores(self, theta, features, actions):
        residuals = actions - expit(self.logits(theta, features))
        return residuals[:, None] * features

    def weighted_step_hessian(self, theta, features, actions, step_weights):
        logits = self.logits(theta, features)
        curvature = expit(logits) * expit(-logits) * step_weights
        hessian = -(features * curvature[:, None]).T @ features
        return 0.5 * (hessian + hessian.T)

    def draw(self, logit, rng):
        action = int(rng.random() < expit(logit))
        log_prob = float(log_expit(logit if action == 1 else -logit))
        return action, log_prob


POLICY_FAMILIES: Dict[str, Type[PolicyFamily]] = {
    BernoulliLogisticPolicy.name: BernoulliLogisticPolicy,
}


def get_policy_family(name: str, state_dim: int, **options) -> PolicyFamily:
    """Instantiate a registered policy family by name."""
    try:
        family = POLICY_FAMILIES[name]
    except KeyError as exc:
        raise errors.PolicyInputError(
            f"unknown policy family {name!r}, "
            f"available: {sorted(POLICY_FAMILIES)}"
        ) from exc
    return family(state_dim, **options)


def params_like(policy: PolicyFamily, values: Iterable[float]) -> PolicyParams:
    """Validate ``values`` as a parameter vector of ``policy``."""
    return as_params(list(values), policy.dim)
