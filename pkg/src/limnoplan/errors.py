"""Exception types shared across the package."""


class LimnoplanError(Exception):
    """Base class for all limnoplan errors."""


class SchemaError(LimnoplanError):
    """A CSV header, feature schema, or schema mismatch problem."""


class InsufficientDataError(LimnoplanError):
    """Too few rows/observations to carry out the requested operation."""


class FitError(LimnoplanError):
    """Model fitting failed: under-determined, non-finite, or singular."""


class ImputationError(LimnoplanError):
    """Gap completion failed (e.g. a fully missing column)."""


class EvaluationError(LimnoplanError):
    """Metric or protocol evaluation is undefined for the given inputs."""


class ConfigError(LimnoplanError):
    """Invalid run configuration."""
