"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code raises them
instead of generic exceptions wherever a caller might want to tell the
failure classes apart.
"""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(ValueError):
    """Tensor widths do not match what a network or routine expects."""


class NumericDivergence(FloatingPointError):
    """A computation produced non-finite values."""

    def __init__(self, message, step=None, t=None):
        super().__init__(message)
        self.step = step
        self.t = t


class FormatError(IOError):
    """A file does not follow the expected binary or text layout."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""
