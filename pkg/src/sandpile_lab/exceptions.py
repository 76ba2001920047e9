"""Exception types raised across the package."""


class SandpileError(Exception):
    """Base class for all errors raised by sandpile_lab."""


class OutOfBounds(SandpileError, IndexError):
    pass


class BoxMismatch(SandpileError, ValueError):
    pass


class CapacityExceeded(SandpileError, MemoryError):
    pass


class NotStabilizing(SandpileError, ValueError):
    pass


class NoConvergence(SandpileError, RuntimeError):
    pass


class SingularPoint(SandpileError, ValueError):
    pass


class SingularBoundary(SandpileError, ValueError):
    pass


class SupportEscape(SandpileError, ValueError):
    pass


class CropOutOfBounds(SandpileError, ValueError):
    pass


class InvariantViolation(SandpileError, AssertionError):
    """An internal consistency check failed; always indicates a bug."""
