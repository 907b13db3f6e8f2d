"""Exception types shared across modules."""

from .elliptic import SolverError
from .potentials import DomainError

__all__ = ["ConfigError", "SolverError", "DomainError"]


class ConfigError(ValueError):
    """Data violating a modelling assumption or the config schema.

    ``assumption`` names the violated assumption (e.g. ``"A6"``) and ``line``
    is the 1-based config line when known.
    """

    def __init__(self, message, assumption=None, line=None):
        super().__init__(message)
        self.assumption = assumption
        self.line = line

    def __str__(self):
        msg = super().__str__()
        return f"line {self.line}: {msg}" if self.line else msg
