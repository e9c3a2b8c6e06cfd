# Airspeed Velocity Benchmarks for ipower
import numpy as np

from ipower import (
    EstimatorConfig,
    IterPowerConfig,
    Surrogate,
    SurrogateSpec,
    generate_batch,
    iterative_power,
    newton_maximize,
)


class SurrogateEvaluation:
    """
    Benchmarking value, gradient and Hessian of the mixed surrogate
    """

    def setup(self):
        self.batch = generate_batch(np.zeros(4), 250, base_seed=0)
        self.surrogate = Surrogate(
            self.batch,
            SurrogateSpec(self.batch.logging_params, EstimatorConfig(weight_cap=20.0)),
        )
        self.theta = np.array([0.1, 0.2, 1.0, 0.3])

    def time_surrogate_value(self):
        self.surrogate.value(self.theta)

    def time_surrogate_derivatives(self):
        self.surrogate.evaluate(self.theta)

    def peakmem_surrogate_derivatives(self):
        self.surrogate.evaluate(self.theta)


class NewtonSolve:
    """
    Benchmarking one inner Newton maximization
    """

    def setup(self):
        self.batch = generate_batch(np.zeros(4), 25, base_seed=0)
        self.surrogate = Surrogate(
            self.batch, SurrogateSpec(self.batch.logging_params, EstimatorConfig())
        )

    def time_newton_maximize(self):
        newton_maximize(self.surrogate, self.batch.logging_params)

    def mem_newton_maximize(self):
        newton_maximize(self.surrogate, self.batch.logging_params)


class IterativePower:
    """
    Benchmarking an outer loop of ten re-anchored surrogates
    """

    def setup(self):
        self.batch = generate_batch(np.zeros(4), 25, base_seed=0)
        self.config = IterPowerConfig(
            iterations=10,
            estimator_config=EstimatorConfig(weight_cap=20.0, cv_fraction=0.99),
        )

    def time_iterative_power(self):
        iterative_power(self.batch, self.config)

    def peakmem_iterative_power(self):
        iterative_power(self.batch, self.config)
