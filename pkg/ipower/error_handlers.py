"""Handle rollout validation errors."""

from typing import Dict, List, Union

from .errors import BatchValidationError, BatchValidationErrors


class BatchErrorHandler:
    """Handler for BatchValidationError objects during batch ingest."""

    def __init__(self, lazy: bool) -> None:
        """Initialize BatchErrorHandler.

        :param lazy: if True, lazily evaluates rollout checks and stores
            BatchValidationError objects. Otherwise raise a
            BatchValidationError immediately.
        """
        self._lazy = lazy
        self._collected_errors = []  # type: ignore

    def collect_error(
        self,
        reason_code: str,
        batch_error: BatchValidationError,
        original_exc: BaseException = None,
    ):
        """Collect rollout error, raising exception if lazy is False.

        :param reason_code: string representing reason for error
        :param batch_error: ``BatchValidationError`` object.
        """
        if not self._lazy:
            raise batch_error from original_exc

        self._collected_errors.append(
            {
                "reason_code": reason_code,
                "error": batch_error,
            }
        )

    def raise_collected(self) -> None:
        """Raise a single ``BatchValidationErrors`` if anything was collected."""
        if self._collected_errors:
            raise BatchValidationErrors(self._collected_errors)

    @property
    def collected_errors(
        self,
    ) -> List[Dict[str, Union[BatchValidationError, str]]]:
        """Retrieve errors collected during lazy validation."""
        return self._collected_errors
