"""Exception types shared across the package."""


class EqregError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(EqregError, ValueError):
    pass


class ResourceLimitError(EqregError, MemoryError):
    pass


class ContractivityError(EqregError, ValueError):
    """Raised when a residual map fails the ``L < 1`` requirement.

    The measured norm is kept on the instance so callers (the CLI in
    particular) can report it.
    """

    def __init__(self, norm, message=None):
        self.norm = float(norm)
        if message is None:
            message = f"residual Lipschitz bound {self.norm:.6g} is not < 1"
        super().__init__(message)


class ParseError(EqregError, ValueError):
    def __init__(self, message, offset):
        self.offset = int(offset)
        super().__init__(f"{message} (at byte offset {self.offset})")


class InsufficientDataError(EqregError, ValueError):
    pass


class UndefinedQuantityError(EqregError, ValueError):
    pass


class ConvergenceWarning(UserWarning):
    """An iterative routine stopped on its iteration budget."""
