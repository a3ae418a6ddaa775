"""Exception types shared across descent_lab."""


class DescentLabError(Exception):
    """Base class for all library errors."""


class DomainError(DescentLabError, ValueError):
    """An expression was evaluated outside its domain (log of a nonpositive
    number, division by zero, ...)."""

    def __init__(self, message, point=None):
        if point is not None:
            message = f"{message} at {point!r}"
        super().__init__(message)
        self.point = point


class UnsupportedOrderError(DescentLabError, ValueError):
    pass


class CannotProjectError(DescentLabError, ValueError):
    pass


class FiberMismatchError(DescentLabError, ValueError):
    pass


class ChartError(DescentLabError, ValueError):
    """A point is not in a chart domain or transition overlap."""


class SingularMetricError(DescentLabError, ValueError):
    pass


class IntegrationError(DescentLabError, RuntimeError):
    """Step-size underflow or loss of chart coverage during integration."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ZeroVectorError(DescentLabError, ValueError):
    pass


class NonIsolatedZeroError(DescentLabError, ValueError):
    pass


class ContinuationError(DescentLabError, RuntimeError):
    pass
