"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data is malformed or inconsistent with the catalog."""


class ConfigError(ValueError):
    """A configuration value is unknown or outside its valid range."""
