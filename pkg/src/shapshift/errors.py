"""Exception types shared across the package."""


class ShapshiftError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(ShapshiftError):
    """A schema is malformed or does not match the data it describes."""


class ParseError(ShapshiftError):
    """A file could not be parsed into the expected structure."""


class DomainError(ShapshiftError):
    """A value falls outside the domain declared for its feature."""


class CapabilityError(ShapshiftError):
    """The requested computation exceeds a configured tractability limit."""


class TrainingError(ShapshiftError):
    """Model training failed or violated a training-time guarantee."""
