"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is out of bounds or a config key is unknown.

    The message always names the offending key so callers can surface it.
    """


class InvariantError(RuntimeError):
    """An internal invariant or operation contract was violated (fail fast)."""
