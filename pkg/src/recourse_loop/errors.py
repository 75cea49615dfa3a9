"""Exception types shared across the package."""


class RecourseLoopError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RecourseLoopError):
    """Invalid configuration value or unknown configuration key."""


class SchemaError(RecourseLoopError):
    """Input data does not match the declared feature schema."""


class DataError(RecourseLoopError):
    """Malformed or unusable input data."""


class ContractError(RecourseLoopError):
    """A call violated an operation's preconditions."""


class SolverError(RecourseLoopError):
    """A numerical solver produced non-finite iterates or diverged."""


class OracleError(RecourseLoopError):
    """A reference computation failed to converge."""
