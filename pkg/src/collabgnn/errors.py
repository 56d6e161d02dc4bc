"""Exception types shared across the package."""


class CollabGNNError(Exception):
    """Base class for all package errors."""


class ShapeError(CollabGNNError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(CollabGNNError, ValueError):
    """Input data violates a documented invariant."""


class ContractError(CollabGNNError, RuntimeError):
    """An API precondition was not met by the caller."""


class DivergenceError(CollabGNNError, RuntimeError):
    """Training produced a non-finite loss."""
