"""Error types shared across the package.

InputError maps to CLI exit code 1, StateError to exit code 2.
"""


class InputError(ValueError):
    """Raised when caller-provided data violates an operation's contract."""


class StateError(RuntimeError):
    """Raised when required state (checkpoints, adapters, bundles) is missing or invalid."""
