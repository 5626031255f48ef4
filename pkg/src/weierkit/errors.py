"""Exception taxonomy shared by all kernel and reduction modules."""


class WeierkitError(Exception):
    """Base class for every error this package raises on purpose."""


class DomainError(WeierkitError):
    """Input lies outside the documented domain of an operation."""


class PoleError(DomainError):
    """Evaluation point coincides with a pole of the requested kernel."""


class UnitCircleError(DomainError):
    """A geometric resummation argument sits on the unit circle."""


class ConvergenceError(WeierkitError):
    """An iterative or series evaluation failed to converge."""


class DegenerateError(WeierkitError):
    """A recursive reduction hit a degenerate intermediate value."""
