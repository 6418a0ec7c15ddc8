"""Package-level exception types."""


class NumericsError(RuntimeError):
    """Raised when a numerical routine cannot produce a trustworthy result.

    Examples: a reduced modulation matrix whose condition estimate exceeds
    the safety limit, or an iterative solver that fails to converge while
    strict mode is requested.
    """
