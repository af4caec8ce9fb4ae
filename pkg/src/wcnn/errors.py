"""Exception types shared across the package.

The CLI maps these onto its exit-code contract (2 usage/config, 3 I/O,
4 numerical), so new exception types should subclass one of the roots
below rather than raising bare ValueError/RuntimeError.
"""


class WcnnError(Exception):
    """Base class for all package errors."""


class ArgumentError(WcnnError, ValueError):
    """An argument or configuration value is invalid."""


class ShapeError(ArgumentError):
    """Operands have incompatible or malformed shapes."""


class ConfigError(ArgumentError):
    """A run-configuration file or flag set cannot be used."""


class BuildError(ArgumentError):
    """Network assembly failed a structural check."""


class GraphStateError(WcnnError):
    """Autodiff tape used out of order (e.g. backward run twice)."""


class NumericalError(WcnnError):
    """Non-finite values appeared where finite ones are required."""


class CodecError(WcnnError):
    """Malformed Netpbm stream."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(WcnnError):
    """Checkpoint file cannot be used."""


class IntegrityError(CheckpointError):
    """Checkpoint bytes are corrupt, truncated, or not a checkpoint."""


class SpecMismatchError(CheckpointError):
    """Checkpoint was written for a different network spec."""


class IngestError(WcnnError):
    """Dataset directory violates the expected layout."""


class ProtocolError(WcnnError):
    """Dataset does not support the requested split protocol."""
