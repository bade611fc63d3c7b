"""Objective wrapper consumed by the optimizers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np


@dataclass
class Objective:
    """A scalar function to be minimized.

    ``fn`` takes one position vector and returns a float.  When ``vectorized``
    is set it instead takes a ``(k, dim)`` array and returns ``k`` values, which
    lets the engines evaluate a whole batch of particles with one call.

    Objectives that change during a run (``pure=False``) also receive the
    global evaluation index of every point, ``fn(x, eval_index)``; the engine
    then stops caching winner fitness between iterations.
    """

    fn: Callable[..., Any]
    name: str = "objective"
    vectorized: bool = False
    pure: bool = True
    known_optimum: Optional[float] = None
    known_optimizer: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __call__(self, x, eval_index: int = 0) -> float:
        x = np.asarray(x, dtype=float)
        if self.vectorized:
            args = (x[None, :],) if self.pure else (x[None, :], np.array([eval_index]))
            return float(np.asarray(self.fn(*args), dtype=float)[0])
        return float(self.fn(x) if self.pure else self.fn(x, eval_index))

    def evaluate(self, X: np.ndarray, first_index: int = 0) -> np.ndarray:
        """Evaluate the rows of ``X``; row ``r`` gets index ``first_index + r``."""
        X = np.asarray(X, dtype=float)
        k = X.shape[0]
        if self.vectorized:
            if self.pure:
                out = self.fn(X)
            else:
                out = self.fn(X, first_index + np.arange(k))
            return np.asarray(out, dtype=float).reshape(k)
        if self.pure:
            return np.array([float(self.fn(row)) for row in X])
        return np.array([float(self.fn(row, first_index + r)) for r, row in enumerate(X)])


def as_objective(obj, **kwargs) -> Objective:
    if isinstance(obj, Objective):
        return obj
    if not callable(obj):
        raise TypeError(f"objective must be callable, got {type(obj).__name__}")
    return Objective(obj, name=getattr(obj, "__name__", "objective"), **kwargs)


def negated(obj: Objective, name: str | None = None) -> Objective:
    """Wrap a function to be maximized so the minimizers can use it."""
    fn = obj.fn

    def neg(*args):
        return -np.asarray(fn(*args), dtype=float)

    return Objective(
        neg,
        name=name or f"-{obj.name}",
        vectorized=obj.vectorized,
        pure=obj.pure,
        meta=dict(obj.meta),
    )
