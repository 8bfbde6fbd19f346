"""Exception hierarchy shared across the package."""


class SfaPanelError(Exception):
    """Base class for all package errors."""


class SchemaError(SfaPanelError):
    """A required column is missing or the schema binding is inconsistent."""


class DataError(SfaPanelError):
    """Invalid values in the input panel (non-positive inputs, duplicates, ...)."""


class ConfigError(SfaPanelError):
    """Unparseable or invalid run configuration."""


class LikelihoodEvaluationError(SfaPanelError, FloatingPointError):
    """Non-finite intermediate while evaluating the likelihood.

    Raised instead of silently saturating so that a line search can
    backtrack from the offending point.
    """


class EstimationError(SfaPanelError):
    """Estimation could not produce a usable optimum."""


class QuadratureError(SfaPanelError):
    """Numerical integration did not reach the requested accuracy."""
