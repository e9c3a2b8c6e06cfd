"""Reading and writing logged batches, parameters, reports and configs.

Batch files are line-delimited JSON: a header object on the first line,
then one object per rollout. Reals are written with ``repr`` precision, so
a write followed by a read reproduces every value bit for bit.
"""

import contextlib
import dataclasses
import json
import logging
import os
import warnings
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, TextIO, Union

import numpy as np
import pandas as pd
import yaml
from packaging import version

from . import constants, errors
from .decorators import PolicyParams, as_params
from .policy import PolicyFamily, get_policy_family
from .trajectory import LoggedBatch, Rollout

logger = logging.getLogger(__name__)

PathOrBuffer = Union[str, os.PathLike, TextIO]


@contextlib.contextmanager
def _open(target: PathOrBuffer, mode: str) -> Iterator[TextIO]:
    """Yield a text handle for a path or pass an open handle through."""
    if isinstance(target, (str, os.PathLike)):
        path = Path(target)
        try:
            handle = path.open(mode)
        except OSError as exc:
            raise errors.BatchFileError(str(exc), path=path) from exc
        with handle:
            yield handle
    else:
        yield target


def _path_of(target: PathOrBuffer) -> Optional[Path]:
    if isinstance(target, (str, os.PathLike)):
        return Path(target)
    return getattr(target, "name", None)


def _dumps(obj: Any) -> str:
    return json.dumps(obj, allow_nan=False)


def _check_file_version(file_version: Optional[str], path) -> None:
    from ipower import __version__  # pylint: disable=import-outside-toplevel

    if file_version is None:
        return
    if version.parse(str(file_version)) > version.parse(__version__):
        warnings.warn(
            f"{path}: written by ipower {file_version}, newer than the "
            f"installed {__version__}",
            UserWarning,
        )


def _policy_header(policy: PolicyFamily) -> Dict[str, Any]:
    from ipower import __version__  # pylint: disable=import-outside-toplevel

    return {
        "ipower_version": __version__,
        "policy_family": policy.name,
        "policy_options": policy.options,
        "state_dim": policy.state_dim,
        "param_dim": policy.dim,
    }


def _header_policy(header: Dict[str, Any], path, params_key: str):
    """Validate a header and return its policy and parameter vector."""
    try:
        theta = header[params_key]
        schema_version = header["schema_version"]
        family = header["policy_family"]
        state_dim = int(header["state_dim"])
        param_dim = int(header["param_dim"])
        options = header.get("policy_options") or {}
    except (KeyError, TypeError, ValueError) as exc:
        raise errors.MalformedRecordError(
            f"line 1: invalid header: {exc!r}", path=path, line_number=1
        ) from exc
    if schema_version != constants.BATCH_SCHEMA_VERSION:
        raise errors.SchemaVersionError(
            f"unsupported schema version {schema_version!r}, expected "
            f"{constants.BATCH_SCHEMA_VERSION}",
            path=path,
            line_number=1,
        )
    _check_file_version(header.get("ipower_version"), path)
    if not isinstance(theta, list) or len(theta) != param_dim:
        raise errors.DimensionMismatchError(
            f"header declares param_dim={param_dim} but {params_key} has "
            f"{len(theta) if isinstance(theta, list) else 'no'} entries",
            path=path,
            line_number=1,
        )
    try:
        policy = get_policy_family(family, state_dim, **options)
    except (errors.PolicyInputError, TypeError) as exc:
        raise errors.BatchFileError(
            f"cannot build policy family {family!r}: {exc}", path=path
        ) from exc
    if policy.dim != param_dim:
        raise errors.DimensionMismatchError(
            f"policy {policy!r} has dimension {policy.dim}, header declares "
            f"{param_dim}",
            path=path,
            line_number=1,
        )
    try:
        params = as_params(theta, param_dim, name=params_key)
    except errors.PolicyInputError as exc:
        raise errors.MalformedRecordError(
            f"line 1: {exc}", path=path, line_number=1
        ) from exc
    return policy, params


def write_batch(batch: LoggedBatch, destination: PathOrBuffer) -> None:
    """Write a logged batch as line-delimited JSON.

    :param batch: the batch to write.
    :param destination: file path or writable text handle.
    :raises BatchFileError: if the destination cannot be opened.
    """
    header = {
        "schema_version": constants.BATCH_SCHEMA_VERSION,
        **_policy_header(batch.policy),
        "logging_theta": batch.logging_params.tolist(),
    }
    with _open(destination, "w") as handle:
        handle.write(_dumps(header) + "\n")
        for rollout in batch.rollouts:
            record = {
                "steps": [
                    {"state": state.tolist(), "action": int(action)}
                    for state, action in zip(rollout.states, rollout.actions)
                ],
                "reward": rollout.reward,
                "aux_signal": rollout.aux_signal,
                "log_prob_logging": rollout.log_prob_logging,
            }
            handle.write(_dumps(record) + "\n")
    logger.info("wrote %d rollouts to %s", len(batch), _path_of(destination))


def _parse_rollout(
    line: str, line_number: int, state_dim: int, path
) -> Rollout:
    try:
        record = json.loads(line)
        steps = record["steps"]
        states = np.array([s["state"] for s in steps], dtype=np.float64)
        actions = np.array([s["action"] for s in steps])
        rollout = Rollout(
            states.reshape(len(steps), -1),
            actions,
            reward=record["reward"],
            log_prob_logging=record["log_prob_logging"],
            aux_signal=record.get("aux_signal"),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise errors.MalformedRecordError(
            f"line {line_number}: malformed rollout record: {exc!r}",
            path=path,
            line_number=line_number,
        ) from exc
    if steps and rollout.states.shape[1] != state_dim:
        raise errors.DimensionMismatchError(
            f"line {line_number}: states have dimension "
            f"{rollout.states.shape[1]}, header declares {state_dim}",
            path=path,
            line_number=line_number,
        )
    return rollout


def read_batch(
    source: PathOrBuffer, validate: bool = True, lazy: bool = False
) -> LoggedBatch:
    """Read a batch written by :func:`write_batch`.

    The stored logging log-probabilities are recomputed from the steps and
    must agree to 1e-6.

    :param source: file path or readable text handle.
    :param validate: run the rollout checks on ingest.
    :param lazy: collect every rollout check failure before raising.
    :raises SchemaVersionError: on an unsupported schema version.
    :raises DimensionMismatchError: if declared and actual dimensions differ.
    :raises MalformedRecordError: if a line cannot be parsed; carries the
        line number.
    :raises LogProbVerificationError: if a stored log-probability cannot be
        reproduced.
    :raises BatchInitError: if the file holds no rollouts.
    """
    path = _path_of(source)
    with _open(source, "r") as handle:
        lines = handle.read().splitlines()
    if not lines or not lines[0].strip():
        raise errors.MalformedRecordError(
            "line 1: missing header", path=path, line_number=1
        )
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise errors.MalformedRecordError(
            f"line 1: invalid header: {exc}", path=path, line_number=1
        ) from exc
    if not isinstance(header, dict):
        raise errors.MalformedRecordError(
            "line 1: header is not an object", path=path, line_number=1
        )
    policy, logging_params = _header_policy(header, path, "logging_theta")

    rollouts = [
        _parse_rollout(line, line_number, policy.state_dim, path)
        for line_number, line in enumerate(lines[1:], start=2)
        if line.strip()
    ]
    try:
        batch = LoggedBatch(
            rollouts,
            logging_params,
            policy,
            validate=validate,
            lazy=lazy,
            log_prob_tolerance=constants.LOG_PROB_FILE_TOLERANCE,
        )
    except errors.BatchValidationError as exc:
        if exc.check != "log_prob_logging":
            raise
        raise errors.LogProbVerificationError(
            f"line {exc.index + 2}: stored log_prob_logging differs from the "
            f"logging policy by {exc.failure_case!r}",
            path=path,
            line_number=exc.index + 2,
            index=exc.index,
            discrepancy=exc.failure_case,
        ) from exc
    logger.info("read %d rollouts from %s", len(batch), path)
    return batch


def write_params(
    params: PolicyParams, policy: PolicyFamily, destination: PathOrBuffer
) -> None:
    """Write a parameter vector with a header naming its policy family."""
    params = as_params(params, policy.dim)
    record = {
        "schema_version": constants.PARAMS_SCHEMA_VERSION,
        **_policy_header(policy),
        "theta": params.tolist(),
    }
    with _open(destination, "w") as handle:
        handle.write(json.dumps(record, allow_nan=False, indent=2) + "\n")


def read_params(
    source: PathOrBuffer, policy: Optional[PolicyFamily] = None
) -> PolicyParams:
    """Read a parameter file written by :func:`write_params`.

    :param source: file path or readable text handle.
    :param policy: if given, the file must describe this policy family.
    """
    path = _path_of(source)
    with _open(source, "r") as handle:
        try:
            record = json.load(handle)
        except ValueError as exc:
            raise errors.MalformedRecordError(
                f"invalid parameter file: {exc}", path=path, line_number=1
            ) from exc
    if not isinstance(record, dict):
        raise errors.MalformedRecordError(
            "parameter file is not an object", path=path, line_number=1
        )
    file_policy, params = _header_policy(record, path, "theta")
    if policy is not None and file_policy != policy:
        raise errors.DimensionMismatchError(
            f"parameters are for {file_policy!r}, expected {policy!r}",
            path=path,
        )
    return params


def write_report(report, destination: PathOrBuffer) -> None:
    """Write an optimization report as one JSON object per iteration."""
    with _open(destination, "w") as handle:
        for record in report.to_records():
            handle.write(_dumps(record) + "\n")


def read_report(source: PathOrBuffer) -> pd.DataFrame:
    """Read a report written by :func:`write_report` into a data frame."""
    with _open(source, "r") as handle:
        records = [json.loads(line) for line in handle if line.strip()]
    return pd.DataFrame(records)


def _to_plain(obj: Any) -> Any:
    """Convert config objects into yaml-compatible builtins."""
    if dataclasses.is_dataclass(obj):
        return {
            field.name: _to_plain(getattr(obj, field.name))
            for field in dataclasses.fields(obj)
        }
    if isinstance(obj, dict):
        return {key: _to_plain(value) for key, value in obj.items()}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_to_plain(value) for value in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _from_plain(cls, data: Any, section: str):
    """Build the config dataclass ``cls`` from a yaml mapping."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise errors.ConfigError(f"section '{section}' must be a mapping")
    fields = {field.name: field for field in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise errors.ConfigError(
            f"unknown keys in section '{section}': {unknown}"
        )
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default
        if dataclasses.is_dataclass(default):
            value = _from_plain(type(default), value, f"{section}.{name}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise errors.ConfigError(f"section '{section}': {exc}") from exc


def _config_sections():
    # pylint: disable=import-outside-toplevel
    from .harness import RunConfig

    return RunConfig, {
        field.name: type(field.default) for field in dataclasses.fields(RunConfig)
    }


def read_config(source: Union[str, os.PathLike]):
    """Create a :class:`~ipower.harness.RunConfig` from yaml.

    :param source: path to a yaml file, or a yaml string.
    :raises ConfigError: on a missing or unsupported ``config_version`` or
        unknown keys.
    """
    try:
        with Path(source).open("r") as handle:
            serialized = yaml.safe_load(handle)
    except (OSError, ValueError):
        serialized = yaml.safe_load(source)
    if not isinstance(serialized, dict):
        raise errors.ConfigError("config must be a yaml mapping")
    config_version = serialized.pop("config_version", None)
    if config_version != constants.CONFIG_VERSION:
        raise errors.ConfigError(
            f"unsupported config_version {config_version!r}, expected "
            f"{constants.CONFIG_VERSION}"
        )
    run_config_cls, sections = _config_sections()
    unknown = sorted(set(serialized) - set(sections))
    if unknown:
        raise errors.ConfigError(f"unknown config sections: {unknown}")
    return run_config_cls(
        **{
            name: _from_plain(cls, serialized.get(name), name)
            for name, cls in sections.items()
        }
    )


def write_config(config, stream: Optional[PathOrBuffer] = None):
    """Write a :class:`~ipower.harness.RunConfig` to yaml.

    :param config: the run config.
    :param stream: file path or writable handle. If None, return a string.
    :returns: yaml string if stream is None, otherwise None.
    """
    serialized = {"config_version": constants.CONFIG_VERSION, **_to_plain(config)}

    def _write_yaml(obj, stream):
        return yaml.safe_dump(obj, stream=stream, sort_keys=False)

    if isinstance(stream, (str, os.PathLike)):
        with Path(stream).open("w") as handle:
            _write_yaml(serialized, handle)
        return None
    return _write_yaml(serialized, stream)


def dump_yaml(obj: Dict[str, Any], stream: Optional[PathOrBuffer] = None):
    """Dump a plain mapping, e.g. a run manifest, to yaml."""
    plain = _to_plain(obj)
    if isinstance(stream, (str, os.PathLike)):
        with Path(stream).open("w") as handle:
            yaml.safe_dump(plain, handle, sort_keys=False)
        return None
    return yaml.safe_dump(plain, stream, sort_keys=False)
