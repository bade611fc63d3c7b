"""Benchmark functions f9 (Weierstrass), f10 (Quartic), f11 (Ackley), f12 (dynamic sphere).

Every function accepts either one point ``(D,)`` or a batch ``(k, D)`` and
returns a float or ``k`` floats respectively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .objective import Objective
from .space import SearchSpace

WEIERSTRASS_A = 0.5
WEIERSTRASS_B = 3.0
WEIERSTRASS_KMAX = 20

_K = np.arange(WEIERSTRASS_KMAX + 1)
_AK = WEIERSTRASS_A**_K
_BK = WEIERSTRASS_B**_K


def _batch(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x, x.ndim == 1


def _out(v, single):
    return float(v[0]) if single else v


def weierstrass(x):
    X, single = _batch(x)
    D = X.shape[1]
    inner = np.cos(2.0 * np.pi * _BK * (X[..., None] + 0.5)) @ _AK
    offset = D * float(np.dot(_AK, np.cos(np.pi * _BK)))
    return _out(inner.sum(axis=1) - offset, single)


def quartic(x):
    """Deterministic Quartic shifted so that the all-ones vector is optimal."""
    X, single = _batch(x)
    i = np.arange(1, X.shape[1] + 1)
    return _out(((X - 1.0) ** 4) @ i, single)


def ackley(x):
    X, single = _batch(x)
    D = X.shape[1]
    rms = np.sqrt(np.sum(X * X, axis=1) / D)
    cosmean = np.sum(np.cos(2.0 * np.pi * X), axis=1) / D
    return _out(-20.0 * np.exp(-0.2 * rms) - np.exp(cosmean) + 20.0 + math.e, single)


def sphere(x):
    X, single = _batch(x)
    return _out(np.sum(X * X, axis=1), single)


@dataclass(frozen=True)
class DynamicEnv:
    """Seeded schedule of sphere centres, redrawn every ``change_period`` evaluations."""

    dim: int
    lower: float = -5.0
    upper: float = 5.0
    change_period: float = math.inf
    seed: int = 0

    def epoch(self, eval_index):
        if math.isinf(self.change_period):
            return np.zeros_like(np.asarray(eval_index), dtype=np.int64)
        return np.asarray(eval_index, dtype=np.int64) // int(self.change_period)

    def epoch_center(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(epoch)]))
        return self.lower + rng.random(self.dim) * (self.upper - self.lower)

    def center(self, eval_index) -> np.ndarray:
        """Centre in force at ``eval_index`` (array of indices gives a stack)."""
        epochs = np.atleast_1d(self.epoch(eval_index))
        out = np.array([self.epoch_center(e) for e in epochs])
        return out[0] if np.ndim(eval_index) == 0 else out


def dynamic_sphere(x, eval_index, env: DynamicEnv):
    X, single = _batch(x)
    idx = np.broadcast_to(np.asarray(eval_index), (X.shape[0],))
    uniq, inv = np.unique(env.epoch(idx), return_inverse=True)
    centers = np.array([env.epoch_center(e) for e in uniq])
    diff = X - centers[inv.reshape(-1)]
    return _out(np.sum(diff * diff, axis=1), single)


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    dim: int
    space: SearchSpace
    known_optimum_value: float
    known_optimizer: Optional[np.ndarray]
    fn: Callable

    def objective(self, **env_kwargs) -> Objective:
        if self.name == "dynamic_sphere":
            env = DynamicEnv(self.dim, self.space.lower[0], self.space.upper[0], **env_kwargs)
            return Objective(
                lambda X, idx: dynamic_sphere(X, idx, env),
                name=self.name,
                vectorized=True,
                pure=False,
                known_optimum=0.0,
                meta={"env": env},
            )
        return Objective(
            self.fn,
            name=self.name,
            vectorized=True,
            known_optimum=self.known_optimum_value,
            known_optimizer=self.known_optimizer,
        )


_REGISTRY = {
    # name: (fn, lower, upper, optimizer value)
    "weierstrass": (weierstrass, -0.5, 0.5, 0.0),
    "quartic": (quartic, -2.0, 2.0, 1.0),
    "ackley": (ackley, -32.0, 32.0, 0.0),
    "sphere": (sphere, -5.0, 5.0, 0.0),
    "dynamic_sphere": (None, -5.0, 5.0, None),
}
ALIASES = {"f9": "weierstrass", "f10": "quartic", "f11": "ackley", "f12": "dynamic_sphere"}


def benchmark_names() -> list[str]:
    return sorted(_REGISTRY)


def get_benchmark(name: str, dim: int) -> BenchmarkSpec:
    key = ALIASES.get(name, name)
    if key not in _REGISTRY:
        raise ConfigurationError(f"unknown benchmark {name!r}; known: {benchmark_names()}")
    if dim < 1:
        raise ConfigurationError("benchmark dimension must be positive")
    fn, lo, hi, opt = _REGISTRY[key]
    optimizer = None if opt is None else np.full(dim, opt)
    return BenchmarkSpec(key, dim, SearchSpace.box(lo, hi, dim), 0.0, optimizer, fn)
