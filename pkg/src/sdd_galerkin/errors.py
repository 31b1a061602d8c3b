"""Exception hierarchy shared by the solver, estimates and CLI."""


class SddError(Exception):
    """Base class for all package errors."""


class PreconditionError(SddError, ValueError):
    """An operation was called outside its admissible inputs."""


class SpecViolation(SddError):
    """A structural hypothesis or an internal contract was violated."""


class OutOfWindowError(SddError, LookupError):
    """A history query fell outside the stored time span."""


class BlowupSuspected(SddError, ArithmeticError):
    """Non-finite or runaway values were produced during integration."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConfigError(SddError, ValueError):
    """Configuration could not be parsed or failed schema validation.

    ``violations`` lists every problem found, not just the first one.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
