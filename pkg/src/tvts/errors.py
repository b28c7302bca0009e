"""Exception hierarchy shared by every subpackage.

The CLI maps these onto process exit codes (see ``tvts.cli.main``).
"""


class TVTSError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TVTSError, ValueError):
    pass


class DimensionError(TVTSError, ValueError):
    pass


class ContractError(TVTSError, RuntimeError):
    """A documented precondition of an operation was violated."""


class NumericError(TVTSError, ArithmeticError):
    pass


class SampleError(TVTSError, ValueError):
    """A sample cannot satisfy the sampling constraints; callers skip it."""


class FormatError(TVTSError, IOError):
    pass


class ValidationError(TVTSError, ValueError):
    pass
