"""Exception types shared across swarmstat."""

from __future__ import annotations

import numpy as np


class SwarmStatError(Exception):
    """Base class for all library errors."""


class ConfigurationError(SwarmStatError, ValueError):
    """Invalid optimizer, experiment or model configuration."""


class DomainError(SwarmStatError, ValueError):
    """Arguments outside the mathematical domain of an operation."""


class DataError(SwarmStatError, ValueError):
    """Malformed or inconsistent input data."""


class StructureError(SwarmStatError, ValueError):
    """Inconsistent transition structure for a renewal process."""


class EvaluationError(SwarmStatError, ArithmeticError):
    """An objective returned a non-finite value.

    The offending (repaired) position is kept on ``position``.
    """

    def __init__(self, message: str, position: np.ndarray):
        super().__init__(message)
        self.position = np.array(position, dtype=float, copy=True)
