"""Exception types shared across the package."""


class SloRouteError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SloRouteError, ValueError):
    """Invalid domain data (bad field values, violated invariants)."""


class TraceFormatError(ValidationError):
    """Malformed trace file; the message carries the offending line number."""


class ConfigError(SloRouteError, ValueError):
    """Invalid or inconsistent configuration."""


class SizeLimitError(SloRouteError, ValueError):
    """Problem instance exceeds a hard size bound (e.g. exhaustive search)."""
