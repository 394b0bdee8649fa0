"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Incompatible tensor shapes or an out-of-range mode index."""


class DomainError(ValueError):
    """Argument outside the mathematical domain (e.g. not positive definite)."""


class UnsupportedGaugeError(ValueError):
    """Operation not defined for this gauge variant."""


class CalibrationError(ValueError):
    """Calibration precondition violated; carries the measured deviation."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class SolverError(RuntimeError):
    """Optimization failed (divergence or non-finite objective)."""
