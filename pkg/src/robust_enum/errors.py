"""Exception hierarchy shared by all modules."""


class RobustEnumError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(RobustEnumError, ValueError):
    pass


class NumericError(RobustEnumError, ArithmeticError):
    """A matrix that must be positive definite is not, or a density underflowed."""


class InitializationError(RobustEnumError):
    pass


class DegenerateComponentError(NumericError):
    """A mixture component collapsed below the minimum effective size."""


class UndersizedClusterError(RobustEnumError):
    pass


class IndefiniteFimError(NumericError):
    pass


class UnsupportedDimensionError(RobustEnumError):
    pass


class EnumerationFailure(RobustEnumError):
    """No candidate model produced a valid score."""


class GeneratorError(RobustEnumError):
    pass


class IngestionError(RobustEnumError):
    pass
