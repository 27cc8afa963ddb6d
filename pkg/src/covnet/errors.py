"""Exception types raised across the package."""


class CovNetError(Exception):
    """Base class for all package errors."""


class ShapeError(CovNetError, ValueError):
    """Operand extents do not agree."""


class ConfigError(CovNetError, ValueError):
    """Invalid configuration (sizes, strides, compression ratio, ...)."""


class GraphError(CovNetError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar root, detached or consumed graph)."""


class MetricError(CovNetError, ValueError):
    """A metric is undefined for the given input."""


class FormatError(CovNetError, ValueError):
    """A binary or text file does not match its declared format."""


class ConvergenceError(CovNetError, RuntimeError):
    """An iterative solver failed to converge."""


class DivergenceError(CovNetError, RuntimeError):
    """Training produced a non-finite loss."""
