"""Exception hierarchy shared across the package.

Two families matter for the CLI exit codes: configuration/input problems
(``ConfigError`` and subclasses) and numerical/estimation failures
(``EstimationError`` and subclasses).
"""

from __future__ import annotations


class RdcovError(Exception):
    """Base class for all rdcov errors."""


class ConfigError(RdcovError):
    """Invalid configuration, schema, or input data shape."""


class SchemaError(ConfigError):
    """A required column is missing from the input file."""


class ParseError(ConfigError):
    """A cell in a numeric column could not be parsed."""


class EmptyDataError(ConfigError):
    """No usable rows remain after loading."""


class EstimationError(RdcovError):
    """Numerical failure during estimation or inference."""


class OneSidedError(EstimationError):
    """All observations lie on one side of the cutoff."""


class InsufficientDataError(EstimationError):
    """Too few distinct in-bandwidth points for the requested fit."""


class RankDeficiencyError(EstimationError):
    """The weighted design matrix is rank deficient."""

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class NearZeroBiasError(EstimationError):
    """Estimated bias constant is zero; the MSE-optimal bandwidth diverges."""


class DegenerateVarianceError(EstimationError):
    """Variance estimate is zero or negative; no confidence interval exists."""
