"""Exception types shared across the package."""


class HeatDimError(Exception):
    """Base class for all package errors."""


class CapExceeded(HeatDimError):
    """A lattice would exceed the configured cardinality cap."""


class DuplicatePoints(HeatDimError):
    pass


class TruncationFailure(HeatDimError):
    """A series did not reach its tolerance within ``max_terms`` terms."""


class BoundViolation(HeatDimError):
    pass


class QuadratureFailure(HeatDimError):
    pass


class BlowUp(HeatDimError):
    pass


class EmptyBoundary(HeatDimError):
    """The level set of the singular-value function has no usable boundary."""


class ViolationFound(HeatDimError):
    pass


class WindowTooNarrow(HeatDimError):
    pass


class LatticeMismatch(HeatDimError):
    pass


class ConfigParseError(HeatDimError):
    pass


class UnknownExperiment(HeatDimError):
    pass


class SchemaError(HeatDimError):
    pass


class EmptyBoundaryWarning(UserWarning):
    pass


class DegenerateGramWarning(UserWarning):
    pass


class ChecksFailed(HeatDimError):
    """One or more in-config assertions failed."""
