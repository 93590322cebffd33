"""Exception hierarchy shared across the package."""


class EcnuError(Exception):
    """Base class for all package errors."""


class DimensionError(EcnuError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(EcnuError, ValueError):
    """A precondition of an operation was violated."""


class ParseError(EcnuError, ValueError):
    """Malformed input file."""


class DataError(EcnuError, ValueError):
    """Input data cannot be processed (e.g. a sensor with no observations)."""


class CheckpointError(EcnuError, ValueError):
    """Checkpoint file is unreadable, truncated, or inconsistent."""


class TrainingError(EcnuError, RuntimeError):
    """Numerical failure during optimization.

    ``snapshot`` holds the last good parameter state, if any.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
