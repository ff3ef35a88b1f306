"""Exception hierarchy shared by all modules, mapped to CLI exit codes."""


class ShallowFlowError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class PreconditionError(ShallowFlowError, ValueError):
    """Violated contract: bad dimensions, invalid arguments, missing cache."""

    exit_code = 2


class ConvergenceError(ShallowFlowError, RuntimeError):
    """An iterative method failed to reach its tolerance."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DivergenceError(ConvergenceError):
    """Training produced a non-finite loss."""


class FlowOverflowError(ConvergenceError):
    """An integration step produced a non-finite state."""


class IntegratorAccuracyError(ConvergenceError):
    """Reference integrations at two resolutions disagree beyond tolerance."""


class BoundViolationError(ShallowFlowError):
    """A verified bound failed; carries the witness point."""

    exit_code = 4

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ParseError(ShallowFlowError, ValueError):
    """Malformed input file; message carries the byte or line position."""

    exit_code = 5
