"""Exception types shared across the package."""


class InputError(ValueError):
    """Arguments violate an operation's preconditions."""


class NumericalFailure(ArithmeticError):
    """A numerical procedure did not reach its required accuracy."""


class ConfigError(ValueError):
    """Malformed experiment configuration file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InadmissibleTime(InputError):
    """Requested time lies above the small-time admissibility bound."""

    def __init__(self, t, bound):
        self.t = t
        self.bound = bound
        super().__init__(f"t = {t:g} is not below the small-time bound {bound:g}")


class DegenerateComparison(ValueError):
    """Two estimates with zero combined standard error and different means."""
