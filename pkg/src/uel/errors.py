"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid user-supplied settings (bad sizes, unknown keys, schema violations)."""


class SubsampleTooSmallError(ValueError):
    """A tree was asked to fit fewer than ``2 * k`` observations."""
