"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """A numeric input lies outside the operation's domain."""


class ContractError(ValueError):
    """A call violates a precondition (bad k, bad index, empty scorer, ...)."""


class EvaluationError(RuntimeError):
    """A function evaluation produced a non-finite value."""


class FormatError(ValueError):
    """A file does not conform to its declared binary or JSON layout."""
