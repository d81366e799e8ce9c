"""Exception hierarchy shared across the package."""


class OmdpError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OmdpError):
    """Bad dimensions, invalid parameters, or a malformed config document."""


class ErgodicityError(OmdpError):
    """The induced chain has no unique stationary distribution we can certify."""


class InvalidOccupancyError(OmdpError):
    """A joint state-action measure violates the stationarity flow constraints."""


class SolverError(OmdpError):
    """An iterative solver exceeded its iteration budget."""


class NumericalError(OmdpError):
    """A computed solution failed its post-hoc certificate."""
