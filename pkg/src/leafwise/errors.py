"""Exception hierarchy shared by all leafwise modules."""


class LeafwiseError(Exception):
    """Base class for every error raised by this package."""


class DomainError(LeafwiseError, ValueError):
    """A point lies outside the representable open disk."""


class NumericError(LeafwiseError, ArithmeticError):
    """A matrix or quantity lost its numerical normal form."""


class ConstructionError(LeafwiseError):
    pass


class FoldLimitError(LeafwiseError):
    """Folding did not terminate; the geometry is corrupt."""


class ParameterError(LeafwiseError, ValueError):
    pass


class DivergingDriftError(LeafwiseError):
    pass


class QuadratureError(LeafwiseError):
    pass


class InsufficientDataError(LeafwiseError):
    pass


class SolverError(LeafwiseError):
    pass


class ConfigError(LeafwiseError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
