"""Cart-pole balancing simulator.

The dynamics are the classic cart-pole equations with the constants of the
common benchmark implementation, integrated with explicit Euler steps. The
cart is pushed left (action 0) or right (action 1) with a fixed force at
every step, and the episode ends when the cart leaves the track or the pole
leans too far. Every step survived, including the last one, earns 1.
"""

import dataclasses
import logging
import math
from collections import namedtuple
from typing import Optional, Tuple

import numpy as np

from . import errors
from .decorators import PolicyParams, as_params
from .policy import BernoulliLogisticPolicy, PolicyFamily
from .trajectory import LoggedBatch, Rollout

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 400
INITIAL_STATE_BOUND = 0.05


class CartpoleState(
    namedtuple("CartpoleState", ["x", "x_dot", "theta_pole", "theta_dot"])
):
    """Cart position and velocity, pole angle and angular velocity (SI)."""

    __slots__ = ()

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)

    def mirrored(self) -> "CartpoleState":
        """The state reflected through the track center."""
        return CartpoleState(*(-value for value in self))


@dataclasses.dataclass(frozen=True)
class CartpolePhysics:
    """Physical constants and termination thresholds.

    ``pole_half_length`` is the distance from the pivot to the pole's
    center of mass.
    """

    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_magnitude: float = 10.0
    time_step: float = 0.02
    x_threshold: float = 2.4
    theta_threshold: float = 12 * 2 * math.pi / 360

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not value > 0:
                raise errors.ConfigError(
                    f"{field.name} must be positive, found {value}"
                )

    @property
    def total_mass(self) -> float:
        return self.cart_mass + self.pole_mass

    @property
    def pole_mass_length(self) -> float:
        return self.pole_mass * self.pole_half_length


def step(
    state: CartpoleState,
    action: int,
    physics: CartpolePhysics = CartpolePhysics(),
) -> Tuple[CartpoleState, bool]:
    """Advance the simulation by one time step.

    :param state: current state.
    :param action: 1 pushes the cart right, 0 pushes it left.
    :param physics: constants of the system.
    :returns: the next state and whether the episode terminated.

    :example:

    >>> from ipower.cartpole import CartpoleState, step
    >>> state, terminated = step(CartpoleState(0.0, 0.0, 0.0, 0.0), 1)
    >>> [round(value, 6) for value in state], terminated
    ([0.0, 0.195122, 0.0, -0.292683], False)
    """
    x, x_dot, theta, theta_dot = state
    force = physics.force_magnitude if action == 1 else -physics.force_magnitude
    cos_theta = math.cos(theta)
    sin_theta = math.sin(theta)

    temp = (
        force + physics.pole_mass_length * theta_dot ** 2 * sin_theta
    ) / physics.total_mass
    theta_acc = (physics.gravity * sin_theta - cos_theta * temp) / (
        physics.pole_half_length
        * (4.0 / 3.0 - physics.pole_mass * cos_theta ** 2 / physics.total_mass)
    )
    x_acc = (
        temp - physics.pole_mass_length * theta_acc * cos_theta / physics.total_mass
    )

    tau = physics.time_step
    next_state = CartpoleState(
        x + tau * x_dot,
        x_dot + tau * x_acc,
        theta + tau * theta_dot,
        theta_dot + tau * theta_acc,
    )
    terminated = bool(
        abs(next_state.x) > physics.x_threshold
        or abs(next_state.theta_pole) > physics.theta_threshold
    )
    return next_state, terminated


def initial_state(rng: np.random.Generator) -> CartpoleState:
    """Draw every coordinate uniformly in ``[-0.05, 0.05]``."""
    return CartpoleState(
        *rng.uniform(-INITIAL_STATE_BOUND, INITIAL_STATE_BOUND, size=4)
    )


def run_rollout(
    params,
    max_steps: int = DEFAULT_MAX_STEPS,
    rng: Optional[np.random.Generator] = None,
    physics: CartpolePhysics = CartpolePhysics(),
    policy: Optional[PolicyFamily] = None,
    initial: Optional[CartpoleState] = None,
) -> Rollout:
    """Run one episode under the stochastic policy ``params``.

    :param params: policy parameters.
    :param max_steps: episode length limit, i.e. the largest return.
    :param rng: random generator, drawn from for the initial state (unless
        ``initial`` is given) and once per action.
    :param physics: constants of the system.
    :param policy: policy family over the 4-dimensional state; defaults to
        the Bernoulli-logistic policy without bias.
    :param initial: explicit initial state.
    :returns: the rollout, with its logging log-probability under ``params``.
    """
    if max_steps < 1:
        raise errors.ConfigError(f"max_steps must be >= 1, found {max_steps}")
    if policy is None:
        policy = BernoulliLogisticPolicy(state_dim=4)
    theta = as_params(params, policy.dim)
    if rng is None:
        rng = np.random.default_rng()
    state = initial_state(rng) if initial is None else CartpoleState(*initial)

    states = []
    actions = []
    for _ in range(max_steps):
        observation = state.as_array()
        features = policy.featurize(observation)[0]
        action, _ = policy.draw(float(np.sum(features * theta)), rng)
        states.append(observation)
        actions.append(action)
        state, terminated = step(state, action, physics)
        if terminated:
            break

    return Rollout.from_policy(
        policy, theta, np.array(states), np.array(actions), reward=len(actions)
    )


def generate_batch(
    params: PolicyParams,
    n_rollouts: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    base_seed: int = 0,
    physics: CartpolePhysics = CartpolePhysics(),
    policy: Optional[PolicyFamily] = None,
) -> LoggedBatch:
    """Gather ``n_rollouts`` episodes under ``params``.

    Rollout ``i`` uses its own generator seeded with ``base_seed + i``, so
    any subset of the batch can be regenerated independently.
    """
    if policy is None:
        policy = BernoulliLogisticPolicy(state_dim=4)
    theta = as_params(params, policy.dim)
    rollouts = [
        run_rollout(
            theta,
            max_steps,
            np.random.default_rng(base_seed + index),
            physics,
            policy,
        )
        for index in range(n_rollouts)
    ]
    batch = LoggedBatch(rollouts, theta, policy)
    logger.debug(
        "generated %d rollouts from seed %d, mean return %.2f",
        n_rollouts,
        base_seed,
        float(np.mean(batch.rewards)),
    )
    return batch
