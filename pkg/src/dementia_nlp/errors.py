"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration and usage problems exit 1,
data and format problems exit 2, numeric failures exit 3.
"""


class DementiaNLPError(Exception):
    exit_code = 1


class ConfigError(DementiaNLPError, ValueError):
    exit_code = 1


class UsageError(DementiaNLPError, RuntimeError):
    exit_code = 1


class FormatError(DementiaNLPError, ValueError):
    """Malformed CHAT-lite input. ``line`` is 1-based, or None if file-level."""

    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PreconditionError(DementiaNLPError, ValueError):
    exit_code = 2


class InsufficientDataError(PreconditionError):
    exit_code = 2


class ShapeError(DementiaNLPError, ValueError):
    exit_code = 3


class BoundsError(DementiaNLPError, IndexError):
    exit_code = 3


class NumericError(DementiaNLPError, ArithmeticError):
    exit_code = 3
