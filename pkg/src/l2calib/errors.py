"""Exception types raised across the package."""


class L2CalibError(Exception):
    """Base class for all package errors."""


class NotFound(L2CalibError, LookupError):
    pass


class FormatError(L2CalibError, ValueError):
    pass


class RangeError(L2CalibError, ValueError):
    pass


class NumericalError(L2CalibError, ArithmeticError):
    pass


class SolverError(L2CalibError, RuntimeError):
    pass


class DesignError(L2CalibError, ValueError):
    pass


class ArgumentError(L2CalibError, ValueError):
    pass


class CriterionError(L2CalibError, RuntimeError):
    """A simulator evaluation failed while computing a calibration criterion."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class OptError(L2CalibError, RuntimeError):
    pass


class SingularError(NumericalError):
    pass


class DomainError(L2CalibError, ValueError):
    pass


class DegenerateGradient(L2CalibError, ValueError):
    pass


class StudyError(L2CalibError, RuntimeError):
    pass
