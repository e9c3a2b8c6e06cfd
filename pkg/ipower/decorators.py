"""Decorators for validating policy parameters at call boundaries."""

import inspect
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import wrapt

from . import errors

#: a parameter vector, coerced to a 1-d float64 array by :func:`as_params`.
PolicyParams = np.ndarray


def as_params(
    theta: Any, dim: Optional[int] = None, name: str = "theta"
) -> PolicyParams:
    """Coerce ``theta`` into a validated parameter vector.

    :param theta: array-like of real numbers.
    :param dim: expected dimension. If None, any dimension >= 1 is accepted.
    :param name: argument name used in error messages.
    :returns: a fresh 1-d float64 array.
    :raises PolicyInputError: if ``theta`` is not a finite 1-d vector of the
        expected dimension.
    """
    try:
        params = np.array(theta, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise errors.PolicyInputError(
            f"{name} cannot be converted to a real vector: {theta!r}"
        ) from exc
    if params.ndim == 0:
        params = params.reshape(1)
    if params.ndim != 1 or params.size == 0:
        raise errors.PolicyInputError(
            f"{name} must be a non-empty vector, found shape {params.shape}"
        )
    if dim is not None and params.size != dim:
        raise errors.PolicyInputError(
            f"{name} has dimension {params.size}, expected {dim}"
        )
    if not np.all(np.isfinite(params)):
        raise errors.PolicyInputError(f"{name} has non-finite entries: {params}")
    return params


def _infer_dim(instance: Any, arguments: Dict[str, Any]) -> Optional[int]:
    """Find the parameter dimension from the bound policy or batch."""
    if instance is not None and hasattr(instance, "dim"):
        return instance.dim
    for key in ("batch", "policy"):
        obj = arguments.get(key)
        if obj is not None and hasattr(obj, "dim"):
            return obj.dim
    return None


def check_params(*param_names: str) -> Callable:
    """Validate parameter-vector arguments when a function is called.

    The dimension is taken from the ``dim`` attribute of the bound instance
    (for policy methods), otherwise from a ``batch`` or ``policy`` argument.

    :param param_names: names of the arguments holding parameter vectors.
    :returns: wrapped function

    :example:

    >>> import numpy as np
    >>> from ipower.decorators import check_params
    >>>
    >>> class Linear:
    ...     dim = 2
    ...
    ...     @check_params("theta")
    ...     def norm(self, theta):
    ...         return float(np.linalg.norm(theta))
    ...
    >>> Linear().norm([3, 4])
    5.0
    """

    @wrapt.decorator
    def _wrapper(
        fn: Callable,
        instance: Union[None, Any],
        args: Union[List[Any], Tuple[Any]],
        kwargs: Dict[str, Any],
    ):
        """Coerce and check parameter vectors before calling the function.

        :param fn: the decorated function.
        :param instance: the object to which the wrapped function was bound
            when it was called. Only applies to methods.
        :param args: positional arguments of the call.
        :param kwargs: keyword arguments of the call.
        """
        bound = inspect.signature(fn).bind(*args, **kwargs)
        dim = _infer_dim(instance, bound.arguments)
        for name in param_names:
            value = bound.arguments.get(name)
            if value is not None:
                bound.arguments[name] = as_params(value, dim, name=name)
        return fn(*bound.args, **bound.kwargs)

    return _wrapper
