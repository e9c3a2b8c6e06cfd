"""ipower-specific errors."""

from collections import defaultdict
from typing import Any, Dict, List, Optional

import pandas as pd


class ConfigError(ValueError):
    """Raised when a configuration object or file is invalid."""


class PolicyInputError(ValueError):
    """Raised when policy parameters or observations are malformed."""


class WeightOverflowError(ArithmeticError):
    """Raised when an importance weight is not finite before capping."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateWeightsError(ValueError):
    """Raised when weights carry no mass, e.g. all zero."""


class BatchInitError(ValueError):
    """Raised when a logged batch cannot be constructed."""


class BatchValidationError(Exception):
    """Raised when a rollout does not pass an ingest check."""

    def __init__(self, message, index=None, check=None, failure_case=None):
        super().__init__(message)
        self.index = index
        self.check = check
        self.failure_case = failure_case


BATCH_ERRORS_SUFFIX = """

Usage Tip
---------

Directly inspect all errors by catching the exception:

```
try:
    batch.validate(lazy=True)
except BatchValidationErrors as err:
    err.failure_cases  # dataframe of failed rollouts
```
"""


class BatchValidationErrors(Exception):
    """Raised when rollout check failures are lazily collected into one error."""

    def __init__(self, batch_errors: List[Dict[str, Any]]):
        error_counts, failure_cases = self._parse_batch_errors(batch_errors)
        super().__init__(self._message(error_counts, failure_cases))
        self.batch_errors = batch_errors
        self.error_counts = error_counts
        self.failure_cases = failure_cases

    @staticmethod
    def _message(error_counts, failure_cases):
        """Format error message."""
        msg = (
            f"A total of {sum(error_counts.values())} "
            "rollout errors were found.\n"
        )

        msg += "\nError Counts"
        msg += "\n------------\n"
        for k, v in error_counts.items():
            msg += "- %s: %d\n" % (k, v)

        summary = (
            failure_cases.groupby("check")["index"]
            .agg(["count", "min", "max"])
            .rename(columns={"min": "first_index", "max": "last_index"})
        )
        msg += "\nRollout Error Summary"
        msg += "\n---------------------\n"
        with pd.option_context("display.max_colwidth", 100):
            msg += summary.to_string()
        msg += BATCH_ERRORS_SUFFIX
        return msg

    @staticmethod
    def _parse_batch_errors(batch_errors: List[Dict[str, Any]]):
        """Parse collected error dicts into counts and a failure-case frame."""
        error_counts = defaultdict(int)  # type: ignore
        rows = []
        for batch_error_dict in batch_errors:
            err = batch_error_dict["error"]
            error_counts[batch_error_dict["reason_code"]] += 1
            rows.append(
                {
                    "index": err.index,
                    "check": err.check,
                    "failure_case": err.failure_case,
                }
            )
        failure_cases = pd.DataFrame(
            rows, columns=["index", "check", "failure_case"]
        ).sort_values("index", kind="stable", ignore_index=True)
        return error_counts, failure_cases


class BatchFileError(Exception):
    """Base class of errors raised while reading a batch file."""

    def __init__(self, message, path=None, line_number=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.line_number = line_number


class SchemaVersionError(BatchFileError):
    """Raised when a file header has an unsupported schema version."""


class DimensionMismatchError(BatchFileError):
    """Raised when declared and actual parameter/state dimensions differ."""


class MalformedRecordError(BatchFileError):
    """Raised when a line of a batch file cannot be parsed."""


class LogProbVerificationError(BatchFileError):
    """Raised when a stored logging log-probability cannot be reproduced."""

    def __init__(
        self,
        message,
        path=None,
        line_number=None,
        index: Optional[int] = None,
        discrepancy: Optional[float] = None,
    ):
        super().__init__(message, path=path, line_number=line_number)
        self.index = index
        self.discrepancy = discrepancy


class NegativeRewardError(ValueError):
    """Raised when the log lower bound is built over a negative reward."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class BoundOverflowError(ArithmeticError):
    """Raised when the exponential upper bound would overflow."""

    def __init__(self, message, index=None, exponent=None):
        super().__init__(message)
        self.index = index
        self.exponent = exponent


class NonConcaveSurrogateError(ValueError):
    """Raised when a surrogate Hessian has a positive eigenvalue."""


class SingularHessianError(ArithmeticError):
    """Raised when the regularized Hessian cannot be factorized."""


class NonFiniteSurrogateError(ArithmeticError):
    """Raised when a surrogate is not finite at its anchor."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DualDivergenceError(ArithmeticError):
    """Raised when the Lagrange multiplier leaves the admissible range."""

    def __init__(self, message, alpha=None, gaps=None):
        super().__init__(message)
        self.alpha = alpha
        self.gaps = gaps


class MissingAuxSignalError(ValueError):
    """Raised when constrained optimization is run without aux signals."""


class InfeasibleConstraintError(RuntimeError):
    """Raised when a constraint is still violated after all iterations."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap
