"""Exception types shared across the package."""


class QfifError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(QfifError):
    """Config text is malformed or has inconsistent shapes."""


class ValidationError(QfifError):
    """A physical invariant of the model is violated."""


class PostselectionTooUnlikely(QfifError):
    """Projection probability fell below the configured floor."""


class AssumptionViolated(QfifError):
    """An analysis assumption (e.g. nonvanishing amplitude) fails at a point."""


class MemoryGuardError(QfifError):
    """Requested brute-force simulation exceeds the memory guard."""
