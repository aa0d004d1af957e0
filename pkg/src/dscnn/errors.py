"""Exception types shared across the package."""


class DscnnError(Exception):
    """Base class for all package errors."""


class DimensionError(DscnnError, ValueError):
    """Tensor shapes or sizes do not satisfy an operation's contract."""


class ContractError(DscnnError, ValueError):
    """A precondition other than a shape rule was violated."""


class SpecError(DscnnError, ValueError):
    """An invalid configuration or parameter specification."""


class FormatError(DscnnError, ValueError):
    """A file on disk does not follow the expected format."""


class LoadError(DscnnError, OSError):
    """A dataset could not be assembled from disk."""


class NumericError(DscnnError, ArithmeticError):
    """A non-finite value appeared where a finite one was required."""
