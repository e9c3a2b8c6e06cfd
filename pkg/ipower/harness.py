"""Experiment orchestration: learning curves, oracle checks and self tests."""

import dataclasses
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from . import constants, errors, logio
from .bounds import (
    BranchRule,
    SurrogateSpec,
    lower_bound_eval,
    mixed_bound_eval,
    power_bound_eval,
    shift_gap,
    upper_bound_factor,
)
from .cartpole import CartpolePhysics, generate_batch
from .estimator import EstimatorConfig, j_hat
from .optimizer import (
    IterPowerConfig,
    MultiplierConfig,
    NewtonConfig,
    OptimizationReport,
    constrained_iterative_power,
    iterative_power,
    newton_maximize,
)
from .policy import BernoulliLogisticPolicy, segment_sum
from .trajectory import LoggedBatch, Rollout, importance_weights

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "T",
    "cv_fraction",
    "repetition",
    "batch",
    "mean_return",
    "surrogate_value",
    "ess",
    "weight_max",
    "failed",
]


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Batched learning-curve protocol on the cart-pole.

    Every (T, cv) cell and repetition starts from zero parameters, and
    alternates between gathering ``rollouts_per_batch`` rollouts and
    re-optimizing on them, ``num_batches`` times.
    With ``stop_on_decrease`` an optimization run ends at the last iteration
    that did not lower the capped estimate.
    """

    num_batches: int = 10
    rollouts_per_batch: int = 25
    rollout_length: int = 400
    repetitions: int = 20
    t_values: Tuple[int, ...] = (1, 2, 5, 10, 20)
    cv_fractions: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.99)
    weight_cap: Optional[float] = constants.DEFAULT_WEIGHT_CAP
    base_seed: int = 0
    newton: NewtonConfig = NewtonConfig()
    branch_rule: Union[BranchRule, str] = BranchRule.MIXED
    policy_bias: bool = False
    stop_on_decrease: bool = True

    def __post_init__(self):
        for name in (
            "num_batches",
            "rollouts_per_batch",
            "rollout_length",
            "repetitions",
        ):
            if getattr(self, name) < 1:
                raise errors.ConfigError(
                    f"{name} must be >= 1, found {getattr(self, name)}"
                )
        object.__setattr__(self, "t_values", tuple(int(t) for t in self.t_values))
        object.__setattr__(
            self, "cv_fractions", tuple(float(cv) for cv in self.cv_fractions)
        )
        if not self.t_values or min(self.t_values) < 1:
            raise errors.ConfigError(
                f"t_values must be a non-empty list of T >= 1, found {self.t_values}"
            )
        if not self.cv_fractions or not all(
            0.0 <= cv <= 1.0 for cv in self.cv_fractions
        ):
            raise errors.ConfigError(
                f"cv_fractions must lie in [0, 1], found {self.cv_fractions}"
            )
        if self.weight_cap is not None and not self.weight_cap > 0:
            raise errors.ConfigError(
                f"weight_cap must be positive, found {self.weight_cap}"
            )
        try:
            object.__setattr__(self, "branch_rule", BranchRule(self.branch_rule))
        except ValueError as exc:
            raise errors.ConfigError(
                f"unknown branch rule {self.branch_rule!r}"
            ) from exc

    def iter_power_config(self, iterations: int, cv_fraction: float):
        """Optimizer settings of one (T, cv) cell."""
        return IterPowerConfig(
            iterations=iterations,
            newton=self.newton,
            estimator_config=EstimatorConfig(
                weight_cap=self.weight_cap, cv_fraction=cv_fraction
            ),
            branch_rule=self.branch_rule,
            stop_on_decrease=self.stop_on_decrease,
        )

    def batch_seed(self, repetition: int, batch_index: int) -> int:
        """First rollout seed of a batch; rollout ``i`` uses this plus ``i``.

        Depends on the repetition and batch only, so every cell sees the
        same first batch.
        """
        return self.base_seed + (
            repetition * self.num_batches + batch_index
        ) * self.rollouts_per_batch


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a config file can hold, one field per yaml section."""

    experiment: ExperimentConfig = ExperimentConfig()
    iter_power: IterPowerConfig = IterPowerConfig()
    multiplier: MultiplierConfig = MultiplierConfig()


def num_workers_from_env() -> int:
    """Worker processes requested through ``IPOWER_NUM_WORKERS``."""
    value = os.environ.get(constants.NUM_WORKERS_ENV, "1")
    try:
        workers = int(value)
    except ValueError as exc:
        raise errors.ConfigError(
            f"{constants.NUM_WORKERS_ENV} must be an integer, found {value!r}"
        ) from exc
    if workers < 1:
        raise errors.ConfigError(
            f"{constants.NUM_WORKERS_ENV} must be >= 1, found {workers}"
        )
    return workers


def _run_cell(
    cell: Tuple[ExperimentConfig, int, float, int]
) -> List[Dict[str, Any]]:
    """Run the batched protocol for one (T, cv, repetition)."""
    config, iterations, cv_fraction, repetition = cell
    policy = BernoulliLogisticPolicy(state_dim=4, bias=config.policy_bias)
    iter_config = config.iter_power_config(iterations, cv_fraction)
    theta = np.zeros(policy.dim)
    rows = []
    for batch_index in range(config.num_batches):
        batch = generate_batch(
            theta,
            config.rollouts_per_batch,
            config.rollout_length,
            config.batch_seed(repetition, batch_index),
            CartpolePhysics(),
            policy,
        )
        row = {
            "T": iterations,
            "cv_fraction": cv_fraction,
            "repetition": repetition,
            "batch": batch_index + 1,
            "mean_return": float(np.mean(batch.rewards)),
            "surrogate_value": np.nan,
            "ess": np.nan,
            "weight_max": np.nan,
            "failed": False,
        }
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                report = iterative_power(batch, iter_config)
        except (ArithmeticError, ValueError) as exc:
            logger.warning(
                "cell T=%d cv=%g repetition %d failed at batch %d: %s",
                iterations,
                cv_fraction,
                repetition,
                batch_index + 1,
                exc,
            )
            row["failed"] = True
            rows.append(row)
            break
        if report.records:
            last = report.records[-1]
            row.update(
                surrogate_value=last.surrogate_value,
                ess=last.ess,
                weight_max=last.weight_max,
            )
        rows.append(row)
        theta = report.final_params
    return rows


def run_learning_curve(
    config: ExperimentConfig = ExperimentConfig(),
    num_workers: Optional[int] = None,
) -> pd.DataFrame:
    """Run the learning-curve experiment.

    :param config: protocol settings.
    :param num_workers: worker processes; None reads ``IPOWER_NUM_WORKERS``.
    :returns: one row per (T, cv, repetition, batch) with the mean return of
        the batch and the diagnostics of the optimization run on it. A cell
        whose optimization fails ends with a row flagged ``failed``.
    """
    if num_workers is None:
        num_workers = num_workers_from_env()
    cells = [
        (config, iterations, cv_fraction, repetition)
        for iterations in config.t_values
        for cv_fraction in config.cv_fractions
        for repetition in range(config.repetitions)
    ]
    logger.info(
        "running %d cells on %d worker(s)", len(cells), num_workers
    )
    if num_workers > 1:
        with ProcessPoolExecutor(max_workers=num_workers) as executor:
            results = list(executor.map(_run_cell, cells))
    else:
        results = [_run_cell(cell) for cell in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def summarize_learning_curve(table: pd.DataFrame) -> pd.DataFrame:
    """Mean, std, count and standard error of the return per (T, cv, batch).

    Rows flagged ``failed`` are left out.
    """
    summary = (
        table.loc[~table["failed"].astype(bool)]
        .groupby(["T", "cv_fraction", "batch"])["mean_return"]
        .agg(["mean", "std", "count"])
        .reset_index()
    )
    summary["stderr"] = summary["std"] / np.sqrt(summary["count"])
    return summary


def directional_check(
    summary: pd.DataFrame,
    better: Tuple[int, float],
    worse: Tuple[int, float],
    batch: Optional[int] = None,
    n_stderr: float = 2.0,
) -> Dict[str, Any]:
    """Whether cell ``better`` beats cell ``worse`` by ``n_stderr`` pooled SEs.

    :param summary: output of :func:`summarize_learning_curve`.
    :param better: (T, cv) of the cell expected to be better.
    :param worse: (T, cv) of the other cell.
    :param batch: batch to compare at; the last one by default.
    """
    if batch is None:
        batch = int(summary["batch"].max())

    def _cell(key):
        iterations, cv_fraction = key
        rows = summary[
            (summary["T"] == iterations)
            & np.isclose(summary["cv_fraction"], cv_fraction)
            & (summary["batch"] == batch)
        ]
        if rows.empty:
            raise KeyError(f"no results for T={iterations}, cv={cv_fraction}")
        return rows.iloc[0]

    high, low = _cell(better), _cell(worse)
    difference = float(high["mean"] - low["mean"])
    pooled = float(np.sqrt(high["stderr"] ** 2 + low["stderr"] ** 2))
    return {
        "batch": batch,
        "better_mean": float(high["mean"]),
        "worse_mean": float(low["mean"]),
        "difference": difference,
        "pooled_stderr": pooled,
        "passed": bool(difference >= n_stderr * pooled),
    }


def write_learning_curve(
    table: pd.DataFrame, config: ExperimentConfig, output_dir
) -> Path:
    """Write the result table, its summary and a run manifest.

    :returns: the output directory.
    """
    from ipower import __version__  # pylint: disable=import-outside-toplevel

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(output_dir / "learning_curve.csv", index=False)
    summarize_learning_curve(table).to_csv(
        output_dir / "summary.csv", index=False
    )
    logio.dump_yaml(
        {
            "ipower_version": __version__,
            "results_schema_version": constants.RESULTS_SCHEMA_VERSION,
            "base_seed": config.base_seed,
            "columns": RESULT_COLUMNS,
            "experiment": config,
        },
        output_dir / "manifest.yaml",
    )
    logger.info("wrote learning curve results to %s", output_dir)
    return output_dir


BANDIT_CASES = {
    # (state, action, reward) of every one-step rollout
    "mixed_sign": [(1.0, 1, 1.0), (2.0, 1, -1.0)],
    "flat": [(1.0, 1, 1.0), (1.0, 0, 1.0)],
    "boundary": [(1.0, 1, 1.0)],
}


def bandit_batch(case: str) -> LoggedBatch:
    """One-step, scalar-parameter logistic bandit logged at ``theta_0 = 0``."""
    policy = BernoulliLogisticPolicy(state_dim=1)
    logging_params = np.zeros(1)
    rollouts = [
        Rollout.from_policy(policy, logging_params, [[s]], [a], reward=r)
        for s, a, r in BANDIT_CASES[case]
    ]
    return LoggedBatch(rollouts, logging_params, policy)


def grid_j_hat(batch: LoggedBatch, grid: np.ndarray) -> np.ndarray:
    """Uncapped ``j_hat`` of a scalar-parameter batch at every grid point.

    The logit of a scalar linear policy is ``x * theta``, so evaluating the
    policy at ``theta = 1`` on features scaled by each grid value gives the
    log-probabilities of the whole grid at once.
    """
    if batch.dim != 1:
        raise errors.PolicyInputError(
            f"grid evaluation needs a scalar parameter, found dim {batch.dim}"
        )
    grid = np.asarray(grid, dtype=np.float64)
    n_steps = batch.features.shape[0]
    scaled = (batch.features[None, :, :] * grid[:, None, None]).reshape(-1, 1)
    step_log_probs = batch.policy.step_log_probs(
        np.ones(1), scaled, np.tile(batch.actions, grid.size)
    ).reshape(grid.size, n_steps)
    log_probs = segment_sum(step_log_probs.T, batch.offsets).T
    weights = np.exp(log_probs - batch.log_probs_logging)
    return np.mean(weights * batch.rewards, axis=1)


def run_bandit_oracle(
    resolution: float = 1e-4, iterations: int = 50, bound: float = 6.0
) -> pd.DataFrame:
    """Compare iterative PoWER with a grid search on scalar bandits.

    :param resolution: grid spacing over ``[-bound, bound]``.
    :param iterations: outer iterations of the optimizer.
    :returns: one row per bandit case with the optimizer's and the grid's
        argmax and value, their distances and the ``flat`` and
        ``at_boundary`` flags.
    """
    if not resolution > 0:
        raise errors.ConfigError(f"resolution must be positive, found {resolution}")
    grid = np.linspace(-bound, bound, int(round(2 * bound / resolution)) + 1)
    config = IterPowerConfig(iterations=iterations)
    rows = []
    for case in BANDIT_CASES:
        batch = bandit_batch(case)
        values = grid_j_hat(batch, grid)
        best = int(np.argmax(values))
        flat = bool(np.ptp(values) <= 1e-12 * max(1.0, np.max(np.abs(values))))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            report = iterative_power(batch, config)
        theta_t = float(report.final_params[0])
        value_t = j_hat(batch, report.final_params, EstimatorConfig())
        rows.append(
            {
                "case": case,
                "iterations": iterations,
                "resolution": resolution,
                "theta_T": theta_t,
                "theta_star": float(grid[best]),
                "abs_theta_diff": abs(theta_t - grid[best]),
                "j_hat_T": value_t,
                "j_hat_star": float(values[best]),
                "abs_value_diff": abs(value_t - values[best]),
                "flat": flat,
                "at_boundary": (not flat) and best in (0, grid.size - 1),
            }
        )
    return pd.DataFrame(rows)


def optimize_batch_file(
    input_path,
    output_dir,
    config: IterPowerConfig = IterPowerConfig(),
    constrained: bool = False,
    constraint_target: Optional[float] = None,
    multiplier_config: MultiplierConfig = MultiplierConfig(),
) -> OptimizationReport:
    """Optimize a logged batch file and write the report and parameters.

    Writes ``report.jsonl`` and ``params.json`` into ``output_dir``.

    :raises MissingAuxSignalError: in constrained mode, when a rollout has
        no aux signal.
    :raises InfeasibleConstraintError: when the constraint is still violated
        after the last iteration; both files are written first.
    """
    batch = logio.read_batch(input_path)
    if constrained:
        report = constrained_iterative_power(
            batch, config, constraint_target, multiplier_config
        )
    else:
        report = iterative_power(batch, config)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logio.write_report(report, output_dir / "report.jsonl")
    logio.write_params(report.final_params, batch.policy, output_dir / "params.json")
    logger.info(
        "optimized %s over %d iterations, results in %s",
        input_path,
        len(report.records),
        output_dir,
    )
    if constrained and not report.converged:
        gap = report.records[-1].constraint_gap
        raise errors.InfeasibleConstraintError(
            f"constraint gap {gap!r} exceeds tolerance "
            f"{report.constraint_tolerance!r}",
            gap=gap,
        )
    return report


def random_instance(
    rng: np.random.Generator,
    max_rollouts: int = 10,
    max_steps: int = 5,
    radius: float = 5.0,
    nonnegative: bool = False,
):
    """A random small batch with two parameter vectors ``theta`` and ``nu``.

    :returns: ``(batch, theta, nu)``.
    """

    def _in_ball(dim):
        direction = rng.normal(size=dim)
        return direction * (
            rng.uniform(0, radius) / max(np.linalg.norm(direction), 1e-12)
        )

    dim = int(rng.integers(1, 4))
    policy = BernoulliLogisticPolicy(state_dim=dim)
    logging_params = rng.normal(scale=0.5, size=dim)
    rollouts = []
    for _ in range(int(rng.integers(1, max_rollouts + 1))):
        length = int(rng.integers(1, max_steps + 1))
        reward = rng.uniform(-1, 1)
        rollouts.append(
            Rollout.from_policy(
                policy,
                logging_params,
                rng.normal(size=(length, dim)),
                rng.integers(0, 2, size=length),
                reward=abs(reward) if nonnegative else reward,
            )
        )
    batch = LoggedBatch(rollouts, logging_params, policy)
    return batch, _in_ball(dim), _in_ball(dim)


def _scale(*values: float) -> float:
    return max(1.0, *(abs(v) for v in values))


def _central_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    gradient = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        gradient[k] = (fn(x + step) - fn(x - step)) / (2 * h)
    return gradient


def _selftest_instance(rng: np.random.Generator) -> Dict[str, float]:
    """Normalized violations of every checked property on one instance.

    A value <= 0 means the property holds.
    """
    plain = EstimatorConfig()
    batch, theta, nu = random_instance(rng)
    spec = SurrogateSpec(nu, plain)
    j_theta = j_hat(batch, theta, plain)
    j_nu = j_hat(batch, nu, plain)
    at_theta = mixed_bound_eval(batch, spec, theta)
    at_nu = mixed_bound_eval(batch, spec, nu)

    violations = {}
    violations["dominance"] = (at_theta.value - j_theta) / _scale(j_theta) - 1e-10
    violations["tangency"] = abs(at_nu.value - j_nu) / _scale(j_nu) - 1e-10

    numeric = _central_difference(lambda x: j_hat(batch, x, plain), nu)
    denominator = max(np.linalg.norm(at_nu.gradient), 1e-8 * _scale(j_nu))
    violations["gradient_match"] = (
        np.linalg.norm(numeric - at_nu.gradient) / denominator - 1e-4
    )

    log_ratios = batch.log_probs(theta) - batch.log_probs(nu)
    violations["upper_bound_dominance"] = max(
        (
            log_ratios[index]
            - np.log(upper_bound_factor(batch, nu, index, theta))
        )
        / _scale(log_ratios[index])
        - 1e-12
        for index in range(len(batch))
    )

    hessian = at_theta.hessian
    violations["concavity"] = float(np.linalg.eigvalsh(hessian).max()) - (
        constants.CONCAVITY_TOLERANCE * max(np.linalg.norm(hessian), 1e-300)
    )

    report = iterative_power(batch, IterPowerConfig(iterations=5))
    values = [j_hat(batch, batch.logging_params, plain)] + [
        record.j_hat for record in report.records
    ]
    violations["mm_ascent"] = max(
        (before - after) / _scale(before) - 1e-9
        for before, after in zip(values[:-1], values[1:])
    )

    positive, theta_pos, nu_pos = random_instance(rng, nonnegative=True)
    single = iterative_power(positive, IterPowerConfig(iterations=1))
    direct = newton_maximize(
        lambda x: power_bound_eval(positive, plain, x),
        positive.logging_params,
        NewtonConfig(),
    )
    violations["power_equivalence"] = (
        0.0 if np.array_equal(single.final_params, direct.params) else 1.0
    )

    beta = rng.uniform(0, 2)
    shifted = lower_bound_eval(
        positive,
        SurrogateSpec(nu_pos, EstimatorConfig(reward_shift=beta)),
        theta_pos,
    ).value
    unshifted = lower_bound_eval(
        positive, SurrogateSpec(nu_pos, plain), theta_pos
    ).value
    gap = shift_gap(positive, nu_pos, beta, theta_pos)
    at_anchor = shift_gap(
        positive, positive.logging_params, beta, positive.logging_params
    )
    # at theta = nu only the importance weights of nu remain
    gap_at_nu = shift_gap(positive, nu_pos, beta, nu_pos)
    expected_gap_at_nu = beta * (np.mean(importance_weights(positive, nu_pos)) - 1.0)
    violations["shift_identity"] = max(
        abs((shifted - unshifted) - gap) / _scale(shifted, unshifted) - 1e-10,
        abs(at_anchor),
        abs(gap_at_nu - expected_gap_at_nu),
    )
    return violations


def run_selftest(n_instances: int = 200, seed: int = 0) -> pd.DataFrame:
    """Check the bound and optimizer properties on random instances.

    :returns: one row per property with the number of instances, the number
        of failures, the worst normalized violation and a ``passed`` flag.
    """
    rng = np.random.default_rng(seed)
    results: Dict[str, List[float]] = {}
    for _ in range(n_instances):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            violations = _selftest_instance(rng)
        for name, value in violations.items():
            results.setdefault(name, []).append(float(value))
    rows = []
    for name, values in results.items():
        values = np.asarray(values)
        rows.append(
            {
                "property": name,
                "instances": values.size,
                "failures": int(np.sum(values > 0)),
                "worst": float(values.max()),
                "passed": bool(np.all(values <= 0)),
            }
        )
    return pd.DataFrame(rows)
