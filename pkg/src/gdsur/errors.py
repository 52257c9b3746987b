"""Exception hierarchy shared across the package.

Numerical failures (singular designs, degenerate covariances) and data
errors (malformed CSV input) are kept on separate branches so the CLI can
map them to distinct exit codes.
"""


class GdsurError(Exception):
    """Base class for all package-specific errors."""


class NumericalError(GdsurError):
    """Base class for numerical failures (CLI exit code 4)."""


class NotPositiveDefinite(NumericalError):
    """A matrix required to be SPD has a non-positive pivot."""


class NoConvergence(NumericalError):
    """An iterative routine exceeded its iteration cap."""


class InvalidParams(NumericalError):
    """Distribution or routine parameters outside their domain."""


class EmptySample(NumericalError):
    """An empirical quantile was requested from an empty sample."""


class InvalidRank(NumericalError):
    """Requested cross-block rank exceeds min(r, N)."""


class InvalidTarget(NumericalError):
    """Spectral-radius target outside (0, 1)."""


class UnstableSpec(NumericalError):
    """A VAR specification violates the stability invariant."""


class SingularDesign(NumericalError):
    """A regression design (Gram) matrix is singular."""


class SingularRestriction(NumericalError):
    """R V R' is not positive definite for the given restriction."""


class InsufficientSample(NumericalError):
    """Sample too short for the requested estimator or test."""


class BootstrapDegenerate(NumericalError):
    """Too many bootstrap resamples failed estimation."""


class DataError(GdsurError):
    """Base class for data-ingestion errors (CLI exit code 3)."""


class SchemaMismatch(DataError):
    """CSV columns do not match the declared panel schema."""


class MissingData(DataError):
    """A selected cell is empty or unparseable; message carries row/col."""


class NonMonotoneDates(DataError):
    """Date column is not strictly increasing."""
