"""Exception hierarchy shared by every module of the package."""


class DynGainError(Exception):
    """Base class for all package errors."""


class RejectedInput(DynGainError, ValueError):
    """An argument violates a documented precondition."""


class ValidationError(RejectedInput):
    """A certificate check failed.

    ``clause`` names the violated condition and ``witness`` holds the
    time (or argument) at which it was observed, when there is one.
    """

    def __init__(self, clause, message, witness=None):
        self.clause = clause
        self.witness = witness
        suffix = f" (witness: {witness!r})" if witness is not None else ""
        super().__init__(f"[{clause}] {message}{suffix}")


class NumericError(DynGainError, ArithmeticError):
    """A numerical operation broke down (factorization failure, non-finite rate)."""


class ConfigError(DynGainError, ValueError):
    """A scenario document could not be parsed or holds an invalid field."""


class SimulationAborted(DynGainError, RuntimeError):
    """A run stopped early. ``log`` carries the samples recorded before the abort."""

    def __init__(self, message, log=None, reason="aborted"):
        super().__init__(message)
        self.log = log
        self.reason = reason
