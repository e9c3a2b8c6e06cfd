"""Rollouts, logged batches and importance weights."""

from typing import Dict, List, Optional, Sequence

import numpy as np

from . import constants, errors
from .decorators import PolicyParams, as_params, check_params
from .error_handlers import BatchErrorHandler
from .policy import PolicyFamily, StepObservation


class Rollout:
    """One logged trajectory.

    :param states: ``(T, state_dim)`` array of visited states.
    :param actions: ``(T,)`` array of logged actions.
    :param reward: aggregated return ``R(tau)``.
    :param log_prob_logging: policy part of ``log p(tau | theta_0)``.
    :param aux_signal: optional secondary signal ``S(tau)``, e.g. a cost.
    """

    __slots__ = ("states", "actions", "reward", "log_prob_logging", "aux_signal")

    def __init__(
        self,
        states,
        actions,
        reward: float,
        log_prob_logging: float,
        aux_signal: Optional[float] = None,
    ) -> None:
        self.states = np.asarray(states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states.reshape(-1, 1)
        self.actions = np.asarray(actions).reshape(-1)
        self.reward = float(reward)
        self.log_prob_logging = float(log_prob_logging)
        self.aux_signal = None if aux_signal is None else float(aux_signal)

    @classmethod
    def from_policy(
        cls,
        policy: PolicyFamily,
        logging_params: PolicyParams,
        states,
        actions,
        reward: float,
        aux_signal: Optional[float] = None,
    ) -> "Rollout":
        """Build a rollout, computing its logging log-probability."""
        rollout = cls(states, actions, reward, 0.0, aux_signal)
        rollout.log_prob_logging = policy.log_prob_rollout(
            logging_params, rollout
        )
        return rollout

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @property
    def steps(self) -> List[StepObservation]:
        """The rollout as a list of (state, action) observations."""
        return [
            StepObservation(state, int(action))
            for state, action in zip(self.states, self.actions)
        ]

    def __repr__(self) -> str:
        return (
            f"Rollout(length={len(self)}, reward={self.reward!r}, "
            f"log_prob_logging={self.log_prob_logging!r}, "
            f"aux_signal={self.aux_signal!r})"
        )


class LoggedBatch:
    """Rollouts gathered under one logging parameter ``theta_0``.

    The batch is immutable after construction. Besides the rollouts it keeps
    a flattened view of all steps (``features``, ``actions``, ``offsets``)
    used by the vectorized estimator and bound computations.
    """

    def __init__(
        self,
        rollouts: Sequence[Rollout],
        logging_params,
        policy: PolicyFamily,
        validate: bool = True,
        lazy: bool = False,
        log_prob_tolerance: float = constants.LOG_PROB_INGEST_TOLERANCE,
    ) -> None:
        """Initialize a logged batch.

        :param rollouts: the logged rollouts, at least one.
        :param logging_params: parameters ``theta_0`` of the logging policy.
        :param policy: the policy family both ``theta_0`` and every evaluated
            parameter belong to.
        :param validate: run the ingest checks of :meth:`validate`.
        :param lazy: collect all rollout errors before raising.
        :param log_prob_tolerance: largest accepted difference between a
            stored and a recomputed logging log-probability.

        :raises BatchInitError: if the batch is empty.
        """
        self.rollouts = tuple(rollouts)
        self.policy = policy
        self.log_prob_tolerance = log_prob_tolerance
        self.logging_params = as_params(
            logging_params, policy.dim, name="logging_params"
        )
        self.logging_params.setflags(write=False)
        if not self.rollouts:
            raise errors.BatchInitError("a logged batch needs N >= 1 rollouts")

        if validate:
            self._check_rollouts(lazy)

        self.lengths = np.array([len(r) for r in self.rollouts], dtype=np.intp)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(
            np.intp
        )
        self.features = policy.featurize(
            np.concatenate([r.states for r in self.rollouts], axis=0)
        )
        self.actions = policy.check_actions(
            np.concatenate([r.actions for r in self.rollouts])
        )
        self.rewards = np.array([r.reward for r in self.rollouts])
        self.log_probs_logging = np.array(
            [r.log_prob_logging for r in self.rollouts]
        )
        self.has_aux = all(r.aux_signal is not None for r in self.rollouts)
        self.aux_signals = (
            np.array([r.aux_signal for r in self.rollouts])
            if self.has_aux
            else None
        )
        for array in (
            self.lengths,
            self.offsets,
            self.features,
            self.actions,
            self.rewards,
            self.log_probs_logging,
        ):
            array.setflags(write=False)

        if validate:
            self._check_log_probs(lazy)

    def __len__(self) -> int:
        return len(self.rollouts)

    @property
    def dim(self) -> int:
        """Dimension of the policy parameters."""
        return self.policy.dim

    def __repr__(self) -> str:
        return (
            f"LoggedBatch(n_rollouts={len(self)}, policy={self.policy!r}, "
            f"logging_params={self.logging_params.tolist()})"
        )

    def validate(self, lazy: bool = False) -> "LoggedBatch":
        """Run the ingest checks again.

        :param lazy: if True, collect every failing rollout and raise a single
            :class:`~ipower.errors.BatchValidationErrors`.
        :returns: the batch itself.
        """
        self._check_rollouts(lazy)
        self._check_log_probs(lazy)
        return self

    def _check_rollouts(self, lazy: bool) -> None:
        handler = BatchErrorHandler(lazy)
        state_dim = self.policy.state_dim
        for index, rollout in enumerate(self.rollouts):
            checks = [
                ("nonempty", len(rollout) > 0, len(rollout)),
                (
                    "state_dim",
                    rollout.states.shape == (len(rollout), state_dim),
                    rollout.states.shape,
                ),
                ("finite_reward", np.isfinite(rollout.reward), rollout.reward),
                (
                    "log_prob_nonpositive",
                    rollout.log_prob_logging <= 0.0,
                    rollout.log_prob_logging,
                ),
                (
                    "finite_aux_signal",
                    rollout.aux_signal is None
                    or np.isfinite(rollout.aux_signal),
                    rollout.aux_signal,
                ),
            ]
            for check, passed, failure_case in checks:
                if not passed:
                    handler.collect_error(
                        check,
                        errors.BatchValidationError(
                            f"rollout {index} failed check '{check}': "
                            f"{failure_case!r}",
                            index=index,
                            check=check,
                            failure_case=failure_case,
                        ),
                    )
            try:
                self.policy.check_actions(rollout.actions)
            except errors.PolicyInputError as exc:
                handler.collect_error(
                    "action_set",
                    errors.BatchValidationError(
                        f"rollout {index} failed check 'action_set': {exc}",
                        index=index,
                        check="action_set",
                        failure_case=str(exc),
                    ),
                    exc,
                )
        handler.raise_collected()

    def _check_log_probs(self, lazy: bool) -> None:
        handler = BatchErrorHandler(lazy)
        recomputed = self.log_probs(self.logging_params)
        discrepancy = np.abs(recomputed - self.log_probs_logging)
        for index in np.flatnonzero(
            ~(discrepancy <= self.log_prob_tolerance)
        ):
            handler.collect_error(
                "log_prob_logging",
                errors.BatchValidationError(
                    f"rollout {index} stores log_prob_logging="
                    f"{self.log_probs_logging[index]!r} but the logging policy "
                    f"gives {recomputed[index]!r}",
                    index=int(index),
                    check="log_prob_logging",
                    failure_case=float(discrepancy[index]),
                ),
            )
        handler.raise_collected()

    def log_probs(self, theta: PolicyParams) -> np.ndarray:
        """``log p(tau_i | theta)`` (policy part) for every rollout."""
        return self.policy.log_prob_rollouts(
            theta, self.features, self.actions, self.offsets
        )

    def grad_log_probs(self, theta: PolicyParams) -> np.ndarray:
        """Gradients of :meth:`log_probs`, shape ``(N, dim)``."""
        return self.policy.grad_log_prob_rollouts(
            theta, self.features, self.actions, self.offsets
        )

    def weighted_hessian(
        self, theta: PolicyParams, rollout_weights: np.ndarray
    ) -> np.ndarray:
        """``sum_i rollout_weights[i] * Hessian of log p(tau_i | theta)``."""
        return self.policy.weighted_hessian(
            theta, self.features, self.actions, self.lengths, rollout_weights
        )


def _check_cap(cap: Optional[float]) -> Optional[float]:
    if cap is not None and not cap > 0:
        raise errors.ConfigError(f"weight cap must be positive, found {cap}")
    return cap


def _weights_from_log_ratios(
    log_ratios: np.ndarray, cap: Optional[float], indices: np.ndarray
) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        weights = np.exp(log_ratios)
    bad = np.flatnonzero(~np.isfinite(weights))
    if bad.size:
        index = int(indices[bad[0]])
        raise errors.WeightOverflowError(
            f"importance weight of rollout {index} is not finite "
            f"(log ratio {log_ratios[bad[0]]!r})",
            index=index,
        )
    if cap is not None:
        weights = np.minimum(weights, cap)
    return weights


@check_params("eval_params")
def importance_weight(
    batch: LoggedBatch,
    index: int,
    eval_params: PolicyParams,
    cap: Optional[float] = None,
) -> float:
    """Importance weight ``p(tau_i | theta) / p(tau_i | theta_0)`` of one rollout.

    :param batch: the logged batch.
    :param index: rollout index.
    :param eval_params: parameters ``theta`` to evaluate.
    :param cap: if not None, the weight is ``min(cap, ratio)``.
    :raises WeightOverflowError: if the ratio overflows before capping.
    """
    _check_cap(cap)
    if not 0 <= index < len(batch):
        raise IndexError(
            f"rollout index {index} out of range for batch of size {len(batch)}"
        )
    rollout = batch.rollouts[index]
    log_ratio = (
        batch.policy.log_prob_rollout(eval_params, rollout)
        - rollout.log_prob_logging
    )
    return float(
        _weights_from_log_ratios(np.array([log_ratio]), cap, np.array([index]))[0]
    )


@check_params("eval_params")
def importance_weights(
    batch: LoggedBatch, eval_params: PolicyParams, cap: Optional[float] = None
) -> np.ndarray:
    """Importance weights of every rollout, see :func:`importance_weight`."""
    _check_cap(cap)
    log_ratios = batch.log_probs(eval_params) - batch.log_probs_logging
    return _weights_from_log_ratios(log_ratios, cap, np.arange(len(batch)))


def effective_sample_size(weights: Sequence[float]) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2`` of nonnegative weights.

    :raises DegenerateWeightsError: if the weights are empty or all zero.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise errors.DegenerateWeightsError("no weights given")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise errors.DegenerateWeightsError(
            "weights must be finite and nonnegative"
        )
    # rescaling by the max keeps the squares in range
    scale = weights.max()
    if scale == 0:
        raise errors.DegenerateWeightsError("all weights are zero")
    scaled = weights / scale
    return float(np.sum(scaled) ** 2 / np.sum(scaled ** 2))


def weight_diagnostics(
    weights: Sequence[float], cap: Optional[float] = None
) -> Dict[str, float]:
    """Summary statistics of importance weights.

    :returns: dict with ``ess``, ``ess_fraction`` (ESS / N), ``weight_max``,
        ``weight_mean`` and ``capped_fraction``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    ess = effective_sample_size(weights)
    return {
        "ess": ess,
        "ess_fraction": ess / weights.size,
        "weight_max": float(weights.max()),
        "weight_mean": float(np.mean(weights)),
        "capped_fraction": (
            0.0 if cap is None else float(np.mean(weights >= cap))
        ),
    }
