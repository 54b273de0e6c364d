"""Exception types shared across the package."""


class AnalysisError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(AnalysisError):
    """A data file could not be parsed; the message names file, row and column."""


class ValidationError(AnalysisError):
    """Inputs violate a structural requirement (shapes, sizes, parameter ranges)."""


class EstimationError(AnalysisError):
    """A numerical procedure could not produce a usable result."""
