"""Exception types shared across the package."""


class PanoDepthError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PanoDepthError, ValueError):
    """Non-finite values, shape mismatches and other bad arguments."""


class AspectRatioError(InvalidInputError):
    """Equirectangular grid whose width is not twice its height."""


class SingularPointError(InvalidInputError):
    """Conversion requested at the coordinate origin."""


class DegenerateCoverageError(PanoDepthError):
    """A loss or metric has no valid pixels to average over."""


class UsageError(PanoDepthError, RuntimeError):
    """API misuse, e.g. backward on a tensor that was never recorded."""


class NonFiniteError(PanoDepthError, FloatingPointError):
    """An op produced NaN or Inf."""


class DivergenceError(PanoDepthError):
    """Optimization produced a non-finite loss.

    The partial loss trace is kept on ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
