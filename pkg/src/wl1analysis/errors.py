"""Exception types raised across the package."""


class WL1Error(Exception):
    """Base class for all package errors."""


class ShapeError(WL1Error, ValueError):
    pass


class RankDeficient(WL1Error, ValueError):
    pass


class InfeasibleSparsity(WL1Error, ValueError):
    """The requested analysis support admits only the zero signal."""


class DegenerateDraw(WL1Error, RuntimeError):
    pass


class PartitionError(WL1Error, ValueError):
    pass


class ZeroReference(WL1Error, ZeroDivisionError):
    pass


class InfeasibleProfile(WL1Error, ValueError):
    """Target accuracies cannot be met with integer support counts."""


class NotConverged(WL1Error, RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
