"""Pytest configuration."""

import os

import numpy as np
import pytest

from ipower.policy import BernoulliLogisticPolicy
from ipower.trajectory import LoggedBatch, Rollout

try:
    # pylint: disable=unused-import
    import hypothesis  # noqa F401
    from hypothesis import settings
except ImportError:
    HAS_HYPOTHESIS = False
else:
    HAS_HYPOTHESIS = True

# ignore test files associated with hypothesis strategies
collect_ignore = []
if not HAS_HYPOTHESIS:
    collect_ignore.append("test_strategies.py")
else:
    settings.register_profile("ci", max_examples=100)
    settings.register_profile("dev", max_examples=10)
    settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))


def make_bandit(cases, logging_params=(0.0,), aux=None):
    """One-step scalar bandit from (state, action, reward) triples."""
    policy = BernoulliLogisticPolicy(state_dim=1)
    aux = [None] * len(cases) if aux is None else aux
    rollouts = [
        Rollout.from_policy(
            policy, logging_params, [[s]], [a], reward=r, aux_signal=c
        )
        for (s, a, r), c in zip(cases, aux)
    ]
    return LoggedBatch(rollouts, logging_params, policy)


@pytest.fixture
def policy():
    """Bernoulli-logistic policy over the 4-dimensional cart-pole state."""
    return BernoulliLogisticPolicy(state_dim=4)


@pytest.fixture
def small_batch():
    """Five two-step rollouts with rewards of both signs."""
    rng = np.random.default_rng(11)
    policy = BernoulliLogisticPolicy(state_dim=2)
    logging_params = np.array([0.3, -0.2])
    rollouts = [
        Rollout.from_policy(
            policy,
            logging_params,
            rng.normal(size=(2, 2)),
            rng.integers(0, 2, size=2),
            reward=reward,
        )
        for reward in [1.0, -0.5, 2.0, 0.25, -1.0]
    ]
    return LoggedBatch(rollouts, logging_params, policy)


@pytest.fixture
def positive_batch():
    """Six rollouts of up to three steps with nonnegative rewards."""
    rng = np.random.default_rng(5)
    policy = BernoulliLogisticPolicy(state_dim=3)
    logging_params = np.array([0.1, 0.0, -0.3])
    rollouts = [
        Rollout.from_policy(
            policy,
            logging_params,
            rng.normal(size=(length, 3)),
            rng.integers(0, 2, size=length),
            reward=reward,
        )
        for length, reward in zip(
            [1, 2, 3, 2, 3, 1], [0.5, 1.0, 0.0, 2.0, 0.75, 1.5]
        )
    ]
    return LoggedBatch(rollouts, logging_params, policy)


@pytest.fixture
def bandit():
    """Factory of one-step scalar bandit batches, see :func:`make_bandit`."""
    return make_bandit
