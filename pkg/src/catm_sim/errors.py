"""Exception taxonomy shared across the simulator.

ConfigError maps to CLI exit code 2, InvariantError to exit code 3.
"""


class ConfigError(ValueError):
    """A scenario/config value is missing, unknown or out of range."""


class InputError(ValueError):
    """An operation was called with arguments outside its domain."""


class InvariantError(RuntimeError):
    """Internal consistency check failed; indicates a simulator bug."""
