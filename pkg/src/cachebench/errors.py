"""Exception types shared across the toolkit."""


class CacheBenchError(Exception):
    """Base class for every error raised by cachebench."""


class GeometryError(CacheBenchError, ValueError):
    pass


class SpecError(CacheBenchError, ValueError):
    """A target spec document failed validation.

    ``field`` names the offending field (dotted path) when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class ConfigurationError(CacheBenchError):
    """A latency table or machine configuration cannot price or run something."""


class FeatureUnavailable(CacheBenchError):
    """The target does not provide an operation (e.g. user-mode flush)."""


class InvalidTimingType(CacheBenchError):
    """A timing type cannot be prepared on this target."""


class PlanError(CacheBenchError):
    """A three-step plan cannot reach its intended cache states on this target."""


class InputError(CacheBenchError, ValueError):
    """Bad user input: unknown ids, mismatched matrices, empty categories."""


class InvariantViolation(CacheBenchError, AssertionError):
    """An internal consistency check failed. This is always a bug."""
