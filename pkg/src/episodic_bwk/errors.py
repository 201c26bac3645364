"""Exception hierarchy shared by the solvers, learners and the CLI."""


class BwkError(Exception):
    """Base class for package errors."""


class ConfigError(BwkError, ValueError):
    """Malformed environment or run configuration."""


class ContractViolation(BwkError, AssertionError):
    """A simulation invariant was broken (a bug, not a learner mistake)."""


class NumericalError(BwkError, ArithmeticError):
    """An iterative solver failed to converge.

    ``diagnostics`` carries whatever the solver knew when it gave up
    (last iterate, residual, iteration count).
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({extra})"
