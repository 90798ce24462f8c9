class ConfigError(ValueError):
    """Invalid or inconsistent configuration (shapes, dimensions, option values)."""


class NumericalError(ArithmeticError):
    """A numerical routine produced non-finite values or failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(NumericalError):
    pass
