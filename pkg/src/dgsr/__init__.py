"""Degradation-guided one-step image super-resolution at desk scale."""

__version__ = "0.1.0"

from .errors import InputError, StateError

__all__ = ["InputError", "StateError", "__version__"]
