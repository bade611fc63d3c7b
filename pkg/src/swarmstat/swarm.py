"""Competitive swarm optimizer with mutated agents, plus CSO and PSO baselines.

All three engines share the same conventions:

* particles are initialised uniformly in the box, velocities uniformly in
  ``[-(upper - lower), upper - lower]``;
* a move that leaves the box is clamped to the violated bound and the
  matching velocity component is zeroed;
* integer / binary coordinates are snapped by ``SearchSpace.repair`` before
  every evaluation while the raw position stays continuous;
* a run stops when the evaluation budget cannot cover another iteration or
  when the incumbent improved by less than ``tolerance`` over the last
  ``stall_window`` iterations.

Randomness comes from one ``numpy.random.Generator`` seeded from the config,
so (objective, space, config) determines the result bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, EvaluationError, SwarmStatError
from .objective import Objective, as_objective
from .space import SearchSpace

ALGORITHMS = ("cso_ma", "cso", "pso")

# canonical constriction coefficients for global-best PSO
PSO_INERTIA = 0.729
PSO_COGNITIVE = 1.49445
PSO_SOCIAL = 1.49445


@dataclass(frozen=True)
class OptConfig:
    swarm_size: int = 50
    phi: float = 0.3
    max_evals: int = 10_000
    tolerance: float = 1e-5
    seed: int = 0
    algorithm: str = "cso_ma"
    stall_window: int = 20

    def validate(self) -> "OptConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if int(self.swarm_size) != self.swarm_size or self.swarm_size < 4:
            raise ConfigurationError(f"swarm_size must be an integer >= 4, got {self.swarm_size}")
        if self.algorithm != "pso" and self.swarm_size % 2:
            raise ConfigurationError(f"swarm_size must be even for pairwise competition, got {self.swarm_size}")
        if self.phi < 0:
            raise ConfigurationError(f"phi must be non-negative, got {self.phi}")
        if self.max_evals < 1:
            raise ConfigurationError("max_evals must be positive")
        if self.max_evals < self.swarm_size:
            raise ConfigurationError(
                f"max_evals={self.max_evals} does not cover the initial sweep of {self.swarm_size} evaluations"
            )
        if self.tolerance < 0:
            raise ConfigurationError("tolerance must be non-negative")
        if self.stall_window < 1:
            raise ConfigurationError("stall_window must be positive")
        return self

    def with_(self, **changes) -> "OptConfig":
        return replace(self, **changes)


@dataclass(eq=False)
class OptResult:
    best_position: np.ndarray
    best_value: float
    evals_used: int
    trace: np.ndarray  # rows of (eval_count, incumbent value)
    seed: int
    elapsed_seconds: float = 0.0
    algorithm: str = "cso_ma"
    iterations: int = 0

    def __eq__(self, other):
        # elapsed time is the only field allowed to differ between replays
        if not isinstance(other, OptResult):
            return NotImplemented
        return (
            np.array_equal(self.best_position, other.best_position)
            and self.best_value == other.best_value
            and self.evals_used == other.evals_used
            and np.array_equal(self.trace, other.trace)
            and self.seed == other.seed
            and self.algorithm == other.algorithm
            and self.iterations == other.iterations
        )


@dataclass(eq=False)
class Swarm:
    positions: np.ndarray
    velocities: np.ndarray
    fitness: np.ndarray
    best_position: np.ndarray
    best_value: float
    eval_count: int = 0
    last_winners: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    last_losers: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    last_mutated: Optional[tuple[int, int]] = None

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def copy(self) -> "Swarm":
        return Swarm(
            self.positions.copy(),
            self.velocities.copy(),
            self.fitness.copy(),
            self.best_position.copy(),
            self.best_value,
            self.eval_count,
            self.last_winners.copy(),
            self.last_losers.copy(),
            self.last_mutated,
        )


def evaluate_particles(swarm: Swarm, objective: Objective, space: SearchSpace, idx: np.ndarray) -> None:
    """Evaluate particles ``idx`` at their repaired positions and update the incumbent."""
    if len(idx) == 0:
        return
    X = space.repair(swarm.positions[idx])
    values = objective.evaluate(X, swarm.eval_count)
    bad = ~np.isfinite(values)
    if bad.any():
        r = int(np.argmax(bad))
        raise EvaluationError(
            f"objective {objective.name!r} returned {values[r]} at evaluation {swarm.eval_count + r}",
            X[r],
        )
    swarm.eval_count += len(idx)
    swarm.fitness[idx] = values
    r = int(np.argmin(values))
    if values[r] < swarm.best_value:
        swarm.best_value = float(values[r])
        swarm.best_position = X[r].copy()


def init_swarm(objective: Objective, space: SearchSpace, n: int, rng: np.random.Generator) -> Swarm:
    positions = space.sample(rng, n)
    velocities = (2.0 * rng.random((n, space.dim)) - 1.0) * space.width
    swarm = Swarm(
        positions=positions,
        velocities=velocities,
        fitness=np.full(n, np.inf),
        best_position=space.repair(positions[0]),
        best_value=np.inf,
    )
    evaluate_particles(swarm, objective, space, np.arange(n))
    return swarm


def _clamp(positions: np.ndarray, velocities: np.ndarray, space: SearchSpace) -> None:
    low = positions < space.lower
    high = positions > space.upper
    out = low | high
    if out.any():
        np.copyto(positions, np.broadcast_to(space.lower, positions.shape), where=low)
        np.copyto(positions, np.broadcast_to(space.upper, positions.shape), where=high)
        velocities[out] = 0.0


def cso_pair_and_update(
    swarm: Swarm,
    objective: Objective,
    space: SearchSpace,
    phi: float,
    rng: np.random.Generator,
) -> Swarm:
    """One competition round: pair at random, move every loser, re-evaluate losers.

    The swarm is updated in place and returned.  Winners keep position,
    velocity and cached fitness; on a fitness tie the first member of the
    pair wins.
    """
    n = swarm.size
    if n % 2:
        raise ConfigurationError(f"cannot pair an odd swarm of {n} particles")
    if not np.all(np.isfinite(swarm.fitness)):
        raise SwarmStatError("all particles must be evaluated before competing")
    half = n // 2
    perm = rng.permutation(n)
    first, second = perm[:half], perm[half:]
    first_wins = swarm.fitness[first] <= swarm.fitness[second]
    winners = np.where(first_wins, first, second)
    losers = np.where(first_wins, second, first)

    r1, r2, r3 = rng.random((3, half, space.dim))
    x = swarm.positions
    center = x.mean(axis=0)
    xl = x[losers]
    v = r1 * swarm.velocities[losers] + r2 * (x[winners] - xl) + phi * r3 * (center - xl)
    xl = xl + v
    _clamp(xl, v, space)
    swarm.positions[losers] = xl
    swarm.velocities[losers] = v
    swarm.last_winners = winners
    swarm.last_losers = losers
    swarm.last_mutated = None
    evaluate_particles(swarm, objective, space, losers)
    return swarm


def mutate_agent(
    swarm: Swarm,
    objective: Objective,
    space: SearchSpace,
    losers: np.ndarray,
    rng: np.random.Generator,
) -> Swarm:
    """Send one random coordinate of one random loser to a random bound."""
    losers = np.asarray(losers)
    if losers.size == 0:
        raise SwarmStatError("mutation needs at least one loser")
    p = int(losers[rng.integers(losers.size)])
    q = int(rng.integers(space.dim))
    to_upper = rng.random() < 0.5
    swarm.positions[p, q] = space.upper[q] if to_upper else space.lower[q]
    swarm.last_mutated = (p, q)
    evaluate_particles(swarm, objective, space, np.array([p]))
    return swarm


def evals_per_iteration(config: OptConfig, objective: Objective) -> int:
    n = config.swarm_size
    if config.algorithm == "pso":
        return n
    per = n // 2 + (1 if config.algorithm == "cso_ma" else 0)
    if not objective.pure:
        per += n // 2
    return per


def cso_iteration(
    swarm: Swarm,
    objective: Objective,
    space: SearchSpace,
    config: OptConfig,
    rng: np.random.Generator,
) -> Swarm:
    """Pair update, then mutation for CSO-MA, then (impure objectives) winner refresh."""
    cso_pair_and_update(swarm, objective, space, config.phi, rng)
    if config.algorithm == "cso_ma":
        mutate_agent(swarm, objective, space, swarm.last_losers, rng)
    if not objective.pure:
        evaluate_particles(swarm, objective, space, swarm.last_winners)
    return swarm


def _stalled(history: list[float], config: OptConfig) -> bool:
    w = config.stall_window
    return len(history) > w and history[-w - 1] - history[-1] < config.tolerance


def _result(best_x, best_f, evals, trace, config, start, iterations) -> OptResult:
    return OptResult(
        best_position=np.array(best_x, dtype=float),
        best_value=float(best_f),
        evals_used=int(evals),
        trace=np.array(trace, dtype=float),
        seed=config.seed,
        elapsed_seconds=time.perf_counter() - start,
        algorithm=config.algorithm,
        iterations=iterations,
    )


def minimize(objective, space: SearchSpace, config: OptConfig = OptConfig()) -> OptResult:
    """Minimize ``objective`` over ``space`` with the algorithm named in ``config``."""
    objective = as_objective(objective)
    config.validate()
    if config.algorithm == "pso":
        return pso_minimize(objective, space, config)
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    swarm = init_swarm(objective, space, config.swarm_size, rng)
    trace = [(swarm.eval_count, swarm.best_value)]
    history = [swarm.best_value]
    per_iter = evals_per_iteration(config, objective)
    iterations = 0
    while swarm.eval_count + per_iter <= config.max_evals:
        cso_iteration(swarm, objective, space, config, rng)
        iterations += 1
        trace.append((swarm.eval_count, swarm.best_value))
        history.append(swarm.best_value)
        if _stalled(history, config):
            break
    return _result(swarm.best_position, swarm.best_value, swarm.eval_count, trace, config, start, iterations)


def pso_minimize(objective, space: SearchSpace, config: OptConfig = OptConfig(algorithm="pso")) -> OptResult:
    """Global-best PSO with constriction constants (inertia 0.729, c1 = c2 = 1.49445)."""
    objective = as_objective(objective)
    config = config.with_(algorithm="pso").validate()
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    n, dim = config.swarm_size, space.dim
    x = space.sample(rng, n)
    v = (2.0 * rng.random((n, dim)) - 1.0) * space.width

    def evaluate(points, first):
        X = space.repair(points)
        f = objective.evaluate(X, first)
        bad = ~np.isfinite(f)
        if bad.any():
            r = int(np.argmax(bad))
            raise EvaluationError(f"objective {objective.name!r} returned {f[r]}", X[r])
        return X, f

    X, f = evaluate(x, 0)
    evals = n
    pbest_x, pbest_f = x.copy(), f.copy()
    g = int(np.argmin(f))
    gbest_x, best_x, best_f = x[g].copy(), X[g].copy(), float(f[g])
    trace = [(evals, best_f)]
    history = [best_f]
    iterations = 0
    while evals + n <= config.max_evals:
        r1, r2 = rng.random((2, n, dim))
        v = PSO_INERTIA * v + PSO_COGNITIVE * r1 * (pbest_x - x) + PSO_SOCIAL * r2 * (gbest_x - x)
        x = x + v
        _clamp(x, v, space)
        X, f = evaluate(x, evals)
        evals += n
        improved = f < pbest_f
        pbest_x[improved] = x[improved]
        pbest_f[improved] = f[improved]
        g = int(np.argmin(pbest_f))
        gbest_x = pbest_x[g].copy()
        r = int(np.argmin(f))
        if f[r] < best_f:
            best_f, best_x = float(f[r]), X[r].copy()
        iterations += 1
        trace.append((evals, best_f))
        history.append(best_f)
        if _stalled(history, config):
            break
    return _result(best_x, best_f, evals, trace, config, start, iterations)
