"""Exception types shared across the workbench.

The CLI maps these onto process exit codes: configuration problems exit 2,
broken input data exits 3, experiment-protocol violations exit 4.
"""


class ArmdError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ArmdError):
    """Bad configuration value, flag combination, or config file."""


class DataError(ArmdError):
    """Unreadable or malformed input data (files, manifests, checkpoints)."""


class ProtocolError(ArmdError):
    """Experiment protocol violation, e.g. train/attack corpus overlap."""


class ValidationError(ArmdError, ValueError):
    """A documented precondition on an argument was violated."""


class ShapeError(ArmdError, ValueError):
    """Operands with incompatible or unsupported shapes."""


class UsageError(ArmdError, RuntimeError):
    """An API was called in a state it does not support."""


class NonFiniteError(ArmdError, ArithmeticError):
    """A NaN or Inf appeared where only finite values are allowed."""
