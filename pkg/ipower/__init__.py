"""Offline policy optimization through sequences of concave surrogate bounds."""

from . import constants, errors
from .bounds import (
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
from .cartpole import (
    CartpolePhysics,
    CartpoleState,
    generate_batch,
    run_rollout,
    step,
)
from .decorators import PolicyParams, as_params, check_params
from .estimator import (
    ControlVariate,
    EstimatorConfig,
    estimator_terms,
    estimator_variance,
    j_hat,
    optimal_control_variate,
    resolve_control_variate,
    shift_for_positivity,
)
from .harness import (
    ExperimentConfig,
    RunConfig,
    optimize_batch_file,
    run_bandit_oracle,
    run_learning_curve,
    run_selftest,
    summarize_learning_curve,
)
from .logio import (
    read_batch,
    read_config,
    read_params,
    write_batch,
    write_config,
    write_params,
)
from .optimizer import (
    IterPowerConfig,
    MultiplierConfig,
    NewtonConfig,
    NewtonResult,
    OptimizationReport,
    constrained_iterative_power,
    iterative_power,
    newton_maximize,
)
from .policy import (
    BernoulliLogisticPolicy,
    PolicyFamily,
    StepObservation,
    get_policy_family,
)
from .trajectory import (
    LoggedBatch,
    Rollout,
    effective_sample_size,
    importance_weight,
    importance_weights,
    weight_diagnostics,
)
from .version import __version__
