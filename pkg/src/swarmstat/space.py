"""Box-shaped search spaces with continuous, integer and binary coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

CONTINUOUS = "continuous"
INTEGER = "integer"
BINARY = "binary"
KINDS = (CONTINUOUS, INTEGER, BINARY)


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """Feasible box ``lower <= x <= upper`` with a kind tag per coordinate.

    Integer and binary coordinates are carried as continuous values by the
    optimizers and only snapped to their lattice by :meth:`repair`, which is
    applied before every objective evaluation.
    """

    lower: np.ndarray
    upper: np.ndarray
    kind: tuple[str, ...] = field(default=())
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise ConfigurationError("lower and upper must be non-empty vectors of equal length")
        kind = tuple(self.kind) if self.kind else (CONTINUOUS,) * lower.size
        if len(kind) != lower.size:
            raise ConfigurationError(f"expected {lower.size} kind tags, got {len(kind)}")
        bad = [k for k in kind if k not in KINDS]
        if bad:
            raise ConfigurationError(f"unknown coordinate kind(s): {sorted(set(bad))}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigurationError("search space bounds must be finite")
        if np.any(lower >= upper):
            q = int(np.argmax(lower >= upper))
            raise ConfigurationError(f"lower[{q}]={lower[q]} is not below upper[{q}]={upper[q]}")
        kinds = np.array(kind)
        is_bin = kinds == BINARY
        if np.any(lower[is_bin] != -1.0) or np.any(upper[is_bin] != 1.0):
            raise ConfigurationError("binary coordinates must have bounds [-1, 1]")
        is_int = kinds == INTEGER
        if np.any(lower[is_int] != np.round(lower[is_int])) or np.any(
            upper[is_int] != np.round(upper[is_int])
        ):
            raise ConfigurationError("integer coordinates need integer-valued bounds")
        if self.names and len(self.names) != lower.size:
            raise ConfigurationError("names must match the dimension")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "_int_mask", is_int)
        object.__setattr__(self, "_bin_mask", is_bin)

    @classmethod
    def box(cls, lower: float, upper: float, dim: int) -> "SearchSpace":
        """The hypercube ``[lower, upper]^dim`` with continuous coordinates."""
        return cls(np.full(dim, float(lower)), np.full(dim, float(upper)))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def has_discrete(self) -> bool:
        return bool(self._int_mask.any() or self._bin_mask.any())

    def __eq__(self, other):
        if not isinstance(other, SearchSpace):
            return NotImplemented
        return (
            np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and self.kind == other.kind
        )

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes(), self.kind))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def repair(self, x: np.ndarray) -> np.ndarray:
        """Snap positions (``(..., dim)``) onto the feasible lattice.

        Integer coordinates are rounded, binary ones mapped to their sign with
        0 sent to +1, then everything is clipped into the box.
        """
        x = self.clip(np.asarray(x, dtype=float))
        if not self.has_discrete:
            return x
        x = x.copy()
        if self._int_mask.any():
            x[..., self._int_mask] = np.round(x[..., self._int_mask])
        if self._bin_mask.any():
            x[..., self._bin_mask] = np.where(x[..., self._bin_mask] < 0.0, -1.0, 1.0)
        return self.clip(x)

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def is_feasible(self, x: np.ndarray) -> bool:
        """Inside the box and consistent with every coordinate kind."""
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            return False
        if self._int_mask.any() and np.any(x[..., self._int_mask] != np.round(x[..., self._int_mask])):
            return False
        if self._bin_mask.any() and np.any(np.abs(x[..., self._bin_mask]) != 1.0):
            return False
        return True

    def near_bounds(self, x: np.ndarray, frac: float = 0.01) -> np.ndarray:
        """Mask of continuous coordinates within ``frac`` of the range from a bound."""
        x = np.asarray(x, dtype=float)
        slack = frac * self.width
        near = (x - self.lower <= slack) | (self.upper - x <= slack)
        return near & ~(self._int_mask | self._bin_mask)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` points drawn uniformly from the box (before repair)."""
        return self.lower + rng.random((n, self.dim)) * self.width


def space_from_bounds(
    bounds: Sequence[tuple[float, float]],
    kind: Sequence[str] | None = None,
    names: Sequence[str] | None = None,
) -> SearchSpace:
    lower, upper = zip(*bounds)
    return SearchSpace(np.array(lower), np.array(upper), tuple(kind or ()), tuple(names or ()))
