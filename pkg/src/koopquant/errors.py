"""Exception hierarchy shared across the package."""


class KoopquantError(Exception):
    """Base class for all package errors."""


class ConfigError(KoopquantError, ValueError):
    """Invalid user-supplied configuration or arguments."""


class InvalidRangeError(ConfigError):
    """Quantizer range with ``x_min >= x_max``."""


class InvalidWordLengthError(ConfigError):
    """Quantizer word length outside the supported ``1..32`` bits."""


class DimensionError(KoopquantError, ValueError):
    """Array shapes that do not fit together."""


class NumericalError(KoopquantError, ArithmeticError):
    """Non-finite results, divergence, or rank problems."""


class DivergenceError(NumericalError):
    """A simulated trajectory left the finite region.

    Attributes
    ----------
    step : int
        Index of the step at which divergence was detected.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class RankDeficientError(NumericalError):
    """A data matrix assumed to have full row rank does not."""
