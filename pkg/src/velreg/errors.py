"""Exception types shared across the package."""


class VelregError(Exception):
    """Base class for velreg-specific failures."""


class ConfigError(VelregError):
    """Invalid configuration file, CLI arguments, or file format."""


class OutOfDomainError(VelregError):
    """Evaluation points outside the mesh bounding box."""


class NumericBlowupError(VelregError):
    """A time-stepping or optimization pass produced non-finite values."""

    def __init__(self, message, step=None, max_abs=None):
        super().__init__(message)
        self.step = step
        self.max_abs = max_abs


class SolverError(VelregError):
    """An iterative linear solver failed to converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
