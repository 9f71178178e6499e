"""Error taxonomy shared across the package.

ContractError signals a violated call contract (bad shapes, out-of-range
arguments, malformed in-memory state). ConfigError signals an invalid run
configuration, FormatError a malformed or wrong-version serialized file.
The CLI maps these onto distinct exit codes.
"""


class ContractError(ValueError):
    """An argument or state violates a documented contract."""


class ConfigError(ValueError):
    """A configuration key/value is unknown, malformed, or inconsistent."""


class FormatError(ValueError):
    """A serialized artifact is malformed or has an unsupported version."""


def require(cond: bool, message: str) -> None:
    """Raise ContractError with `message` unless `cond` holds."""
    if not cond:
        raise ContractError(message)
