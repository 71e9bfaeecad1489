"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class ConfigError(ValidationError):
    """Raised when a configuration is internally inconsistent or incomplete."""
