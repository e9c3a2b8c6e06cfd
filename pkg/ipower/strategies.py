"""Hypothesis strategies for parameters, observations and logged batches.

The strategies keep states and parameters in moderate ranges so that
property tests exercise the bounds away from floating point overflow.
"""

from functools import wraps
from typing import Optional

import numpy as np

from .policy import BernoulliLogisticPolicy, StepObservation, params_like
from .trajectory import LoggedBatch, Rollout

try:
    import hypothesis.extra.numpy as npst
    import hypothesis.strategies as st
    from hypothesis.strategies import composite
except ImportError:  # pragma: no cover

    def composite(fn):
        """placeholder composite strategy."""
        return fn

    HAS_HYPOTHESIS = False
else:
    HAS_HYPOTHESIS = True


def strategy_import_error(fn):
    """Decorator to generate input error if dependency is missing."""

    @wraps(fn)
    def _wrapper(*args, **kwargs):
        if not HAS_HYPOTHESIS:  # pragma: no cover
            raise ImportError(
                'Strategies for generating data requires "hypothesis" to be \n'
                "installed. You can install ipower together with the \n"
                "strategies dependencies with:\n"
                "pip install ipower[strategies]"
            )
        return fn(*args, **kwargs)

    return _wrapper


def _reals(bound: float):
    return st.floats(
        -bound, bound, allow_nan=False, allow_infinity=False, width=64
    )


@strategy_import_error
@composite
def policy_params(draw, dim: int, bound: float = 2.0):
    """Parameter vectors of dimension ``dim`` with entries in ``[-bound, bound]``."""
    values = draw(npst.arrays(np.float64, dim, elements=_reals(bound)))
    return params_like(BernoulliLogisticPolicy(state_dim=dim), values)


@strategy_import_error
@composite
def step_observations(draw, state_dim: int, bound: float = 2.0):
    """A single (state, action) pair of a binary-action policy."""
    state = draw(npst.arrays(np.float64, state_dim, elements=_reals(bound)))
    return StepObservation(state, draw(st.integers(0, 1)))


@strategy_import_error
@composite
def logged_batches(
    draw,
    state_dim: Optional[int] = None,
    max_rollouts: int = 10,
    max_steps: int = 5,
    nonnegative: bool = False,
    with_aux: bool = False,
    state_bound: float = 1.0,
    param_bound: float = 1.0,
):
    """Small logged batches of the Bernoulli-logistic policy.

    :param state_dim: state dimension, drawn in ``[1, 3]`` when None.
    :param max_rollouts: largest number of rollouts N.
    :param max_steps: largest rollout length.
    :param nonnegative: draw rewards in ``[0, 1]`` instead of ``[-1, 1]``.
    :param with_aux: attach an aux signal in ``[0, 1]`` to every rollout.
    """
    if state_dim is None:
        state_dim = draw(st.integers(1, 3))
    policy = BernoulliLogisticPolicy(state_dim=state_dim)
    logging_params = draw(policy_params(state_dim, param_bound))
    rewards = st.floats(
        0.0 if nonnegative else -1.0, 1.0, allow_nan=False, width=64
    )
    rollouts = []
    for _ in range(draw(st.integers(1, max_rollouts))):
        length = draw(st.integers(1, max_steps))
        states = draw(
            npst.arrays(
                np.float64, (length, state_dim), elements=_reals(state_bound)
            )
        )
        actions = draw(npst.arrays(np.int64, length, elements=st.integers(0, 1)))
        rollouts.append(
            Rollout.from_policy(
                policy,
                logging_params,
                states,
                actions,
                reward=draw(rewards),
                aux_signal=draw(st.floats(0.0, 1.0, width=64)) if with_aux else None,
            )
        )
    return LoggedBatch(rollouts, logging_params, policy)
