"""Command line interface: ``ipower {curve,oracle,optimize,selftest}``."""

import argparse
import dataclasses
import logging
import sys
from typing import List, Optional

from . import errors, logio
from .harness import (
    ExperimentConfig,
    RunConfig,
    optimize_batch_file,
    run_bandit_oracle,
    run_learning_curve,
    run_selftest,
    write_learning_curve,
)
from .optimizer import IterPowerConfig

logger = logging.getLogger(__name__)


def _float_or_none(value: str) -> Optional[float]:
    return None if value.lower() in ("none", "off") else float(value)


def _int_list(value: str) -> List[int]:
    return [int(item) for item in value.split(",") if item]


def _float_list(value: str) -> List[float]:
    return [float(item) for item in value.split(",") if item]


def _load_config(path: Optional[str]) -> RunConfig:
    return logio.read_config(path) if path else RunConfig()


def _overrides(args: argparse.Namespace, names) -> dict:
    return {
        name: getattr(args, name)
        for name in names
        if hasattr(args, name)
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipower",
        description="Offline policy optimization with iterative PoWER.",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    curve = subparsers.add_parser(
        "curve",
        help="batched learning-curve experiment on the cart-pole",
        argument_default=argparse.SUPPRESS,
    )
    curve.add_argument("--config", default=None, help="yaml config file")
    curve.add_argument("--output", default="results", help="output directory")
    curve.add_argument("--num-batches", dest="num_batches", type=int)
    curve.add_argument("--rollouts-per-batch", dest="rollouts_per_batch", type=int)
    curve.add_argument("--rollout-length", dest="rollout_length", type=int)
    curve.add_argument("--repetitions", type=int)
    curve.add_argument("--t-values", dest="t_values", type=_int_list)
    curve.add_argument("--cv-fractions", dest="cv_fractions", type=_float_list)
    curve.add_argument("--weight-cap", dest="weight_cap", type=_float_or_none)
    curve.add_argument("--base-seed", dest="base_seed", type=int)

    oracle = subparsers.add_parser(
        "oracle", help="compare the optimizer with a grid search on bandits"
    )
    oracle.add_argument("--resolution", type=float, default=1e-4)
    oracle.add_argument("--iterations", type=int, default=50)

    optimize = subparsers.add_parser(
        "optimize",
        help="optimize a logged batch file",
        argument_default=argparse.SUPPRESS,
    )
    optimize.add_argument("input", help="batch file written by ipower")
    optimize.add_argument("--config", default=None, help="yaml config file")
    optimize.add_argument("--output", default="optimized", help="output directory")
    optimize.add_argument("--iterations", type=int)
    optimize.add_argument("--weight-cap", dest="weight_cap", type=_float_or_none)
    optimize.add_argument("--cv-fraction", dest="cv_fraction", type=float)
    optimize.add_argument("--constrained", action="store_true", default=False)
    optimize.add_argument(
        "--constraint-target", dest="constraint_target", type=float, default=None
    )

    selftest = subparsers.add_parser(
        "selftest", help="check bound and optimizer properties"
    )
    selftest.add_argument("--instances", type=int, default=200)
    selftest.add_argument("--seed", type=int, default=0)
    return parser


def _curve(args) -> int:
    run_config = _load_config(args.config)
    experiment = dataclasses.replace(
        run_config.experiment,
        **_overrides(
            args,
            [field.name for field in dataclasses.fields(ExperimentConfig)],
        ),
    )
    table = run_learning_curve(experiment)
    write_learning_curve(table, experiment, args.output)
    return 0


def _oracle(args) -> int:
    table = run_bandit_oracle(args.resolution, args.iterations)
    print(table.to_string(index=False))
    return 0


def _optimize(args) -> int:
    run_config = _load_config(args.config)
    iter_power = run_config.iter_power
    estimator_config = dataclasses.replace(
        iter_power.estimator_config, **_overrides(args, ["weight_cap", "cv_fraction"])
    )
    config: IterPowerConfig = dataclasses.replace(
        iter_power,
        estimator_config=estimator_config,
        **_overrides(args, ["iterations"]),
    )
    try:
        report = optimize_batch_file(
            args.input,
            args.output,
            config,
            constrained=args.constrained,
            constraint_target=args.constraint_target,
            multiplier_config=run_config.multiplier,
        )
    except errors.InfeasibleConstraintError as exc:
        logger.error("%s", exc)
        return 1
    print(report.to_frame().to_string(index=False))
    return 0


def _selftest(args) -> int:
    table = run_selftest(args.instances, args.seed)
    print(table.to_string(index=False))
    return 0 if table["passed"].all() else 1


COMMANDS = {
    "curve": _curve,
    "oracle": _oracle,
    "optimize": _optimize,
    "selftest": _selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (
        errors.ConfigError,
        errors.BatchFileError,
        errors.BatchInitError,
        errors.BatchValidationError,
        errors.BatchValidationErrors,
        errors.MissingAuxSignalError,
    ) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
