"""Exception types shared across the package."""


class UavSimError(Exception):
    """Base class for all package errors."""


class InfeasibleGeometry(UavSimError):
    """The requested number of UAVs cannot be placed with the required separation."""


class DegenerateGeometry(UavSimError):
    """A propagation distance collapsed to zero."""


class SolverFailure(UavSimError):
    """An iterative solver hit its iteration limit without meeting its contract."""


class SizeLimit(UavSimError):
    """A brute-force routine was asked for an instance larger than it supports."""


class Divergence(UavSimError):
    """Training produced a non-finite loss."""
