"""Newton maximization of surrogates and the iterative PoWER loops."""

import dataclasses
import logging
import warnings
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import scipy.linalg

from . import constants, errors
from .bounds import (
    BranchRule,
    SurrogateEval,
    SurrogateSpec,
    build_surrogate,
    check_concavity,
)
from .decorators import PolicyParams, as_params
from .estimator import (
    ControlVariate,
    EstimatorConfig,
    j_hat,
    resolve_control_variate,
    shift_for_positivity,
)
from .trajectory import LoggedBatch, importance_weights, weight_diagnostics

logger = logging.getLogger(__name__)

SurrogateFn = Callable[[PolicyParams], SurrogateEval]


@dataclasses.dataclass(frozen=True)
class NewtonConfig:
    """Settings of the damped Newton maximizer.

    :param steps_per_iteration: number of Newton steps.
    :param ridge: initial regularization subtracted from the Hessian.
    :param max_step_norm: steps longer than this are rescaled to it.
    :param backtracking: halve rejected steps until the value does not
        decrease. When off, every finite step is accepted.
    :param shrink: step factor applied at each halving.
    :param max_halvings: halvings tried before giving up on a step.
    :param check_concavity: spot-check the Hessian spectrum at the start.
    """

    steps_per_iteration: int = constants.NEWTON_STEPS
    ridge: float = constants.NEWTON_RIDGE
    max_step_norm: float = constants.NEWTON_MAX_STEP_NORM
    backtracking: bool = True
    shrink: float = constants.NEWTON_SHRINK
    max_halvings: int = constants.NEWTON_MAX_HALVINGS
    check_concavity: bool = True

    def __post_init__(self):
        if self.steps_per_iteration < 1:
            raise errors.ConfigError(
                "steps_per_iteration must be >= 1, found "
                f"{self.steps_per_iteration}"
            )
        if not self.ridge >= 0:
            raise errors.ConfigError(f"ridge must be >= 0, found {self.ridge}")
        if not self.max_step_norm > 0:
            raise errors.ConfigError(
                f"max_step_norm must be positive, found {self.max_step_norm}"
            )
        if not 0 < self.shrink < 1:
            raise errors.ConfigError(
                f"shrink must be in (0, 1), found {self.shrink}"
            )
        if self.max_halvings < 0:
            raise errors.ConfigError(
                f"max_halvings must be >= 0, found {self.max_halvings}"
            )


@dataclasses.dataclass(frozen=True)
class IterPowerConfig:
    """Settings of :func:`iterative_power`.

    :param iterations: number ``T`` of re-anchored surrogate maximizations.
    :param newton: inner maximizer settings.
    :param estimator_config: weight cap, shift and control variate. Its
        ``cv_fraction`` selects a recomputed control variate.
    :param recompute_cv_each_iteration: recompute the control variate at
        every anchor, otherwise only at the logging parameters.
    :param branch_rule: surrogate used at every iteration. The lower-only
        rule shifts the rewards so that the log bound applies.
    :param min_ess_fraction: stop early when the effective sample size at
        the new parameters falls below this fraction of N.
    :param stop_on_decrease: stop early, discarding the new parameters, when
        an iteration lowers the capped estimate. Capping voids the ascent
        guarantee of the surrogates.
    """

    iterations: int = 1
    newton: NewtonConfig = NewtonConfig()
    estimator_config: EstimatorConfig = EstimatorConfig()
    recompute_cv_each_iteration: bool = True
    branch_rule: Union[BranchRule, str] = BranchRule.MIXED
    min_ess_fraction: Optional[float] = None
    stop_on_decrease: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise errors.ConfigError(
                f"iterations must be >= 1, found {self.iterations}"
            )
        try:
            object.__setattr__(self, "branch_rule", BranchRule(self.branch_rule))
        except ValueError as exc:
            raise errors.ConfigError(
                f"unknown branch rule {self.branch_rule!r}"
            ) from exc
        if self.min_ess_fraction is not None and not (
            0 < self.min_ess_fraction <= 1
        ):
            raise errors.ConfigError(
                "min_ess_fraction must be in (0, 1], found "
                f"{self.min_ess_fraction}"
            )


@dataclasses.dataclass(frozen=True)
class MultiplierConfig:
    """Dual updates of the Lagrange multiplier ``alpha``.

    :param step_size: dual step ``eta``. None means ``0.1 / |S_0|``, or 0.1
        when the target is 0.
    :param max_dual_steps: dual steps per outer iteration.
    :param tolerance: the constraint is met when
        ``|gap| <= tolerance * max(1, |S_0|)``.
    :param initial: starting multiplier.
    :param divergence_limit: abort when ``|alpha|`` exceeds this.
    :param fixed: keep ``alpha`` at ``initial`` and skip dual updates.
    """

    step_size: Optional[float] = None
    max_dual_steps: int = constants.DUAL_MAX_STEPS
    tolerance: float = constants.DUAL_TOLERANCE
    initial: float = 0.0
    divergence_limit: float = constants.DUAL_DIVERGENCE_LIMIT
    fixed: bool = False

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise errors.ConfigError(
                f"step_size must be positive, found {self.step_size}"
            )
        if self.max_dual_steps < 1:
            raise errors.ConfigError(
                f"max_dual_steps must be >= 1, found {self.max_dual_steps}"
            )
        if not self.tolerance > 0:
            raise errors.ConfigError(
                f"tolerance must be positive, found {self.tolerance}"
            )
        if not np.isfinite(self.initial):
            raise errors.ConfigError("initial multiplier must be finite")

    def resolve_step_size(self, target: float) -> float:
        """Dual step used for the constraint target ``target``."""
        if self.step_size is not None:
            return self.step_size
        return 0.1 / abs(target) if target != 0 else 0.1


@dataclasses.dataclass(frozen=True)
class NewtonResult:
    """Outcome of :func:`newton_maximize`.

    ``values`` holds the surrogate value at the start and after every
    accepted step.
    """

    params: PolicyParams
    value: float
    values: List[float]
    steps_taken: int
    backtracking_exhausted: bool
    ridge_used: float


def _newton_direction(
    hessian: np.ndarray, gradient: np.ndarray, ridge: float
):
    """Solve ``(ridge I - H) d = g``, raising the ridge until it factorizes."""
    identity = np.eye(gradient.size)
    while True:
        try:
            factor = scipy.linalg.cho_factor(ridge * identity - hessian)
            direction = scipy.linalg.cho_solve(factor, gradient)
        except (np.linalg.LinAlgError, ValueError):
            direction = None
        if direction is not None and np.all(np.isfinite(direction)):
            return direction, ridge
        if ridge >= constants.NEWTON_MAX_RIDGE:
            raise errors.SingularHessianError(
                "regularized Hessian is not negative definite with ridge "
                f"{ridge!r}"
            )
        ridge = min(
            ridge * 10 if ridge > 0 else constants.NEWTON_RIDGE,
            constants.NEWTON_MAX_RIDGE,
        )
        logger.debug("raising Newton ridge to %g", ridge)


def _try_evaluate(surrogate: SurrogateFn, theta: PolicyParams):
    try:
        evaluation = surrogate(theta)
    except errors.BoundOverflowError as exc:
        logger.debug("trial point rejected: %s", exc)
        return None
    if not np.isfinite(evaluation.value):
        return None
    return evaluation


def newton_maximize(
    surrogate: SurrogateFn,
    init: Any,
    config: NewtonConfig = NewtonConfig(),
) -> NewtonResult:
    """Maximize a concave surrogate with damped Newton steps.

    Every step is ``d = (ridge I - H)^-1 g``, rescaled to at most
    ``config.max_step_norm`` and halved until the value does not decrease.
    Steps stop early at a point with exactly zero gradient or when the step
    no longer moves the parameters.

    :param surrogate: callable returning a :class:`SurrogateEval`, e.g. a
        :class:`~ipower.bounds.Surrogate`.
    :param init: starting parameters.
    :param config: Newton settings.
    :returns: the final parameters and the value trace.
    :raises NonFiniteSurrogateError: if the surrogate is not finite at
        ``init``.
    :raises NonConcaveSurrogateError: if the concavity spot check fails.
    :raises SingularHessianError: if the Hessian cannot be regularized.
    """
    theta = as_params(init, name="init")
    current = surrogate(theta)
    if not (
        np.isfinite(current.value) and np.all(np.isfinite(current.gradient))
    ):
        raise errors.NonFiniteSurrogateError(
            f"surrogate is not finite at the initial point {theta}"
        )
    if config.check_concavity:
        check_concavity(current)

    values = [current.value]
    ridge = config.ridge
    exhausted = False
    steps_taken = 0
    for _ in range(config.steps_per_iteration):
        gradient = current.gradient
        if not np.any(gradient):
            break
        direction, ridge = _newton_direction(current.hessian, gradient, ridge)
        norm = np.linalg.norm(direction)
        if norm > config.max_step_norm:
            direction = direction * (config.max_step_norm / norm)

        halvings = config.max_halvings if config.backtracking else 0
        scale = 1.0
        accepted = None
        stalled = False
        for _ in range(halvings + 1):
            trial = theta + scale * direction
            if np.array_equal(trial, theta):
                stalled = True
                break
            evaluation = _try_evaluate(surrogate, trial)
            if evaluation is not None and (
                not config.backtracking or evaluation.value >= current.value
            ):
                accepted = evaluation
                break
            scale *= config.shrink

        if stalled:
            break
        if accepted is None:
            exhausted = True
            warnings.warn(
                f"Newton backtracking exhausted after {halvings} halvings; "
                "returning the best point found",
                UserWarning,
            )
            break
        theta, current = trial, accepted
        values.append(current.value)
        steps_taken += 1

    return NewtonResult(
        params=theta,
        value=current.value,
        values=values,
        steps_taken=steps_taken,
        backtracking_exhausted=exhausted,
        ridge_used=ridge,
    )


@dataclasses.dataclass(frozen=True)
class IterationRecord:
    """Diagnostics of one outer iteration."""

    iteration: int
    theta: PolicyParams
    surrogate_value: float
    surrogate_at_anchor: float
    j_hat: float
    ess: float
    ess_fraction: float
    weight_max: float
    control_variate: float
    cv_degenerate: bool
    reward_shift: float
    newton_steps: int
    backtracking_exhausted: bool
    alpha: Optional[float] = None
    constraint_value: Optional[float] = None
    constraint_gap: Optional[float] = None
    relative_constraint_gap: Optional[float] = None
    dual_steps: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        """Plain python representation, ``theta`` as a list."""
        record = dataclasses.asdict(self)
        record["theta"] = [float(x) for x in self.theta]
        return record


@dataclasses.dataclass
class OptimizationReport:
    """Per-iteration records of an optimization run."""

    initial_params: PolicyParams
    records: List[IterationRecord] = dataclasses.field(default_factory=list)
    stopped_early: bool = False
    constraint_target: Optional[float] = None
    constraint_tolerance: Optional[float] = None

    @property
    def final_params(self) -> PolicyParams:
        """Parameters after the last recorded iteration."""
        if not self.records:
            return self.initial_params
        return self.records[-1].theta

    @property
    def converged(self) -> Optional[bool]:
        """Whether the final constraint gap is within tolerance.

        None for unconstrained runs.
        """
        if self.constraint_target is None or not self.records:
            return None
        gap = self.records[-1].constraint_gap
        return bool(abs(gap) <= self.constraint_tolerance)

    def to_records(self) -> List[Dict[str, Any]]:
        return [record.to_dict() for record in self.records]

    def to_frame(self) -> pd.DataFrame:
        """One row per iteration, ``theta`` spread over ``theta_<k>`` columns."""
        frame = pd.DataFrame(self.to_records())
        if frame.empty:
            return frame
        thetas = pd.DataFrame(
            frame.pop("theta").tolist(), index=frame.index
        ).add_prefix("theta_")
        return pd.concat([frame, thetas], axis=1)


def _anchor_surrogate(
    batch: LoggedBatch,
    anchor: PolicyParams,
    config: IterPowerConfig,
    cv: ControlVariate,
    signal: Optional[np.ndarray],
    iteration: int,
):
    """Surrogate anchored at ``anchor`` for the given control variate."""
    estimator_config = config.estimator_config
    if config.branch_rule is BranchRule.LOWER_ONLY:
        beta = max(
            estimator_config.reward_shift,
            shift_for_positivity(batch, cv.value, signal),
        )
    else:
        beta = estimator_config.reward_shift
    effective = dataclasses.replace(
        estimator_config,
        reward_shift=beta,
        control_variate=cv.value,
        cv_fraction=0.0,
    )
    spec = SurrogateSpec(anchor, effective, config.branch_rule)
    surrogate = build_surrogate(batch, spec, signal)
    at_anchor = surrogate.value(anchor)
    if not np.isfinite(at_anchor):
        raise errors.NonFiniteSurrogateError(
            f"surrogate is not finite at the anchor of iteration {iteration}",
            iteration=iteration,
        )
    return surrogate, at_anchor, beta


def _record(
    batch: LoggedBatch,
    iteration: int,
    result: NewtonResult,
    at_anchor: float,
    cv: ControlVariate,
    beta: float,
    weight_cap: Optional[float],
    **constraint_fields,
) -> IterationRecord:
    weights = importance_weights(batch, result.params, weight_cap)
    diagnostics = weight_diagnostics(weights, weight_cap)
    return IterationRecord(
        iteration=iteration,
        theta=result.params,
        surrogate_value=result.value,
        surrogate_at_anchor=at_anchor,
        j_hat=j_hat(batch, result.params, EstimatorConfig(weight_cap=weight_cap)),
        ess=diagnostics["ess"],
        ess_fraction=diagnostics["ess_fraction"],
        weight_max=diagnostics["weight_max"],
        control_variate=cv.value,
        cv_degenerate=cv.degenerate,
        reward_shift=beta,
        newton_steps=result.steps_taken,
        backtracking_exhausted=result.backtracking_exhausted,
        **constraint_fields,
    )


def _ess_too_low(record: IterationRecord, config: IterPowerConfig) -> bool:
    if config.min_ess_fraction is None:
        return False
    if record.ess_fraction >= config.min_ess_fraction:
        return False
    warnings.warn(
        f"effective sample size fraction {record.ess_fraction:.3g} fell below "
        f"{config.min_ess_fraction} at iteration {record.iteration}; stopping",
        UserWarning,
    )
    return True


def _estimate_decreased(record: IterationRecord, previous: float) -> bool:
    slack = constants.ESTIMATE_DECREASE_TOLERANCE * max(1.0, abs(previous))
    if record.j_hat >= previous - slack:
        return False
    warnings.warn(
        f"capped estimate fell from {previous:.6g} to {record.j_hat:.6g} at "
        f"iteration {record.iteration}; keeping the previous parameters",
        UserWarning,
    )
    return True


def iterative_power(
    batch: LoggedBatch, config: IterPowerConfig = IterPowerConfig()
) -> OptimizationReport:
    """Maximize the estimator through a sequence of re-anchored surrogates.

    Starting from the logging parameters, iteration ``t`` anchors the
    surrogate at ``theta_{t-1}`` and runs the Newton maximizer from there.
    With one iteration and no control variate this is the PoWER update.

    :param batch: logged rollouts.
    :param config: number of iterations, Newton and estimator settings.
    :returns: the per-iteration report.
    :raises NonFiniteSurrogateError: if a surrogate is not finite at its
        anchor; ``.iteration`` names the iteration.
    """
    theta = batch.logging_params.copy()
    report = OptimizationReport(initial_params=theta)
    cv = None
    weight_cap = config.estimator_config.weight_cap
    previous = j_hat(batch, theta, EstimatorConfig(weight_cap=weight_cap))
    for iteration in range(1, config.iterations + 1):
        anchor = theta
        if cv is None or config.recompute_cv_each_iteration:
            cv = resolve_control_variate(batch, anchor, config.estimator_config)
        surrogate, at_anchor, beta = _anchor_surrogate(
            batch, anchor, config, cv, None, iteration
        )
        result = newton_maximize(surrogate, anchor, config.newton)
        theta = result.params
        record = _record(
            batch,
            iteration,
            result,
            at_anchor,
            cv,
            beta,
            weight_cap,
        )
        if config.stop_on_decrease and _estimate_decreased(record, previous):
            report.stopped_early = True
            break
        report.records.append(record)
        previous = record.j_hat
        logger.debug(
            "iteration %d: surrogate %.6g -> %.6g, j_hat %.6g, ess %.3g",
            iteration,
            at_anchor,
            result.value,
            record.j_hat,
            record.ess,
        )
        if _ess_too_low(record, config):
            report.stopped_early = True
            break
    return report


def constrained_iterative_power(
    batch: LoggedBatch,
    config: IterPowerConfig = IterPowerConfig(),
    constraint_target: Optional[float] = None,
    multiplier_config: MultiplierConfig = MultiplierConfig(),
) -> OptimizationReport:
    """Iterative PoWER under the equality constraint ``E_theta[S] = S_0``.

    At every anchor the inner problem maximizes the surrogate of the
    combined signal ``R + alpha S`` for the current multiplier, and
    ``alpha`` takes dual steps ``alpha <- alpha - eta (S_hat(theta) - S_0)``
    until the constraint gap is within tolerance or the dual step budget of
    the iteration is spent. The multiplier carries over between iterations.

    :param batch: logged rollouts, every one with an aux signal.
    :param config: outer loop settings.
    :param constraint_target: ``S_0``. None keeps the constraint at its
        estimate under the logging parameters.
    :param multiplier_config: dual update settings.
    :raises MissingAuxSignalError: if a rollout has no aux signal.
    :raises DualDivergenceError: if ``|alpha|`` exceeds the divergence limit.
    """
    if not batch.has_aux:
        raise errors.MissingAuxSignalError(
            "constrained optimization needs an aux signal on every rollout"
        )
    aux = batch.aux_signals
    weight_cap = config.estimator_config.weight_cap
    plain = EstimatorConfig(weight_cap=weight_cap)
    if constraint_target is None:
        constraint_target = j_hat(batch, batch.logging_params, plain, aux)
    eta = multiplier_config.resolve_step_size(constraint_target)
    tolerance = multiplier_config.tolerance * max(1.0, abs(constraint_target))
    dual_steps = 1 if multiplier_config.fixed else multiplier_config.max_dual_steps

    theta = batch.logging_params.copy()
    report = OptimizationReport(
        initial_params=theta,
        constraint_target=constraint_target,
        constraint_tolerance=tolerance,
    )
    alpha = multiplier_config.initial
    cv = None
    for iteration in range(1, config.iterations + 1):
        anchor = theta
        gaps = []
        for step in range(1, dual_steps + 1):
            signal = batch.rewards + alpha * aux
            if cv is None or config.recompute_cv_each_iteration:
                cv = resolve_control_variate(
                    batch, anchor, config.estimator_config, signal
                )
            surrogate, at_anchor, beta = _anchor_surrogate(
                batch, anchor, config, cv, signal, iteration
            )
            result = newton_maximize(surrogate, anchor, config.newton)
            constraint_value = j_hat(batch, result.params, plain, aux)
            gap = constraint_value - constraint_target
            gaps.append(gap)
            used_alpha = alpha
            if multiplier_config.fixed or abs(gap) <= tolerance:
                break
            alpha = alpha - eta * gap
            if not abs(alpha) <= multiplier_config.divergence_limit:
                raise errors.DualDivergenceError(
                    f"multiplier diverged to {alpha!r} at iteration "
                    f"{iteration}, dual step {step}",
                    alpha=alpha,
                    gaps=gaps,
                )
        theta = result.params
        record = _record(
            batch,
            iteration,
            result,
            at_anchor,
            cv,
            beta,
            weight_cap,
            alpha=used_alpha,
            constraint_value=constraint_value,
            constraint_gap=gap,
            relative_constraint_gap=(
                gap / abs(constraint_target) if constraint_target != 0 else gap
            ),
            dual_steps=step,
        )
        report.records.append(record)
        logger.debug(
            "iteration %d: alpha %.6g, constraint gap %.3g after %d dual steps",
            iteration,
            used_alpha,
            gap,
            step,
        )
        if _ess_too_low(record, config):
            report.stopped_early = True
            break

    if not report.converged:
        warnings.warn(
            f"constraint gap {report.records[-1].constraint_gap!r} exceeds "
            f"tolerance {tolerance!r} after {len(report.records)} iterations",
            UserWarning,
        )
    return report
