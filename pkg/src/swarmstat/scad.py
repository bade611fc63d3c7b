"""SCAD-penalised least squares and its solution path over a grid of penalty weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, DomainError
from .objective import Objective
from .space import SearchSpace
from .swarm import OptConfig, minimize

# ordered as listed for the lake study (13 values)
DEFAULT_RHO_GRID = (1e-6, 1e-5, 1e-4, 1e-3, 0.01, 0.025, 0.05, 0.1, 0.2, 0.5, 1.0, 10.0, 100.0)
BETA_BOUND = 3.0
# 26 particles (pairing needs an even swarm) for 100 iterations of 13 + 1 evaluations
DEFAULT_PATH_CONFIG = OptConfig(swarm_size=26, max_evals=26 + 100 * 14, tolerance=0.0)

LAKE_VARIABLES = ("Depth", "Chi-a", "DO", "Turbidity", "pH", "NH4-N", "NO3-N", "TN", "TP",
                  "TOC", "TDS", "T", "Ca", "K", "Mg", "Na", "F")


@dataclass(frozen=True)
class ScadConfig:
    a: float = 2.5
    lam: float = 1.0
    rho_grid: tuple = DEFAULT_RHO_GRID

    def __post_init__(self):
        if not self.a > 2:
            raise ConfigurationError(f"a must exceed 2, got {self.a}")
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        grid = tuple(float(r) for r in self.rho_grid)
        if not grid:
            raise ConfigurationError("rho grid is empty")
        if any(r <= 0 for r in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("rho grid must be positive and strictly increasing")
        object.__setattr__(self, "rho_grid", grid)


@dataclass
class RegressionData:
    X: np.ndarray
    y: np.ndarray
    names: tuple = ()
    standardized: bool = False

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2 or self.X.shape[0] != self.y.size:
            raise DataError(f"X {self.X.shape} does not match y of length {self.y.size}")
        if not self.names:
            self.names = tuple(f"x{j + 1}" for j in range(self.X.shape[1]))

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def standardize(self) -> "RegressionData":
        """Columns centred and scaled to unit (population) standard deviation."""
        sd = self.X.std(axis=0)
        if np.any(sd == 0):
            raise DataError("constant column cannot be standardized")
        Xs = (self.X - self.X.mean(axis=0)) / sd
        return RegressionData(Xs, self.y.copy(), self.names, True)


def scad_penalty(beta, lam: float = 1.0, a: float = 2.5):
    """Continuous SCAD penalty (linear, quadratic blend, then flat at lam^2 (a+1)/2)."""
    b = np.abs(np.asarray(beta, dtype=float))
    mid = (2.0 * a * lam * b - b * b - lam * lam) / (2.0 * (a - 1.0))
    out = np.where(b <= lam, lam * b, np.where(b <= a * lam, mid, lam * lam * (a + 1.0) / 2.0))
    return float(out) if out.ndim == 0 else out


def scad_objective(beta, data: RegressionData, rho: float, cfg: ScadConfig = ScadConfig()) -> float:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.p,):
        raise DomainError(f"beta has shape {beta.shape}, expected ({data.p},)")
    r = data.y - data.X @ beta
    return float(r @ r + rho * np.sum(scad_penalty(beta, cfg.lam, cfg.a)))


def scad_batch_objective(data: RegressionData, rho: float, cfg: ScadConfig = ScadConfig()) -> Objective:
    X, y = data.X, data.y

    def f(B):
        R = y[None, :] - B @ X.T
        return np.einsum("kn,kn->k", R, R) + rho * scad_penalty(B, cfg.lam, cfg.a).sum(axis=1)

    return Objective(f, name=f"scad_rho{rho:g}", vectorized=True)


def scad_space(p: int, bound: float = BETA_BOUND, names: Sequence[str] = ()) -> SearchSpace:
    return SearchSpace(np.full(p, -bound), np.full(p, bound), names=tuple(names))


@dataclass
class PathPoint:
    rho: float
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    min_mean: float
    min_sd: float
    minima: np.ndarray
    boundary_runs: int = 0


@dataclass
class SolutionPath:
    points: list = field(default_factory=list)
    names: tuple = ()

    def write_csv(self, path) -> None:
        """Columns: rho_index, rho, min_mean, min_sd, then mean and SD per coefficient."""
        header = ["rho_index", "rho", "min_mean", "min_sd"]
        header += [f"{n}_mean" for n in self.names] + [f"{n}_sd" for n in self.names]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, pt in enumerate(self.points, start=1):
                w.writerow([i, f"{pt.rho:.17g}", f"{pt.min_mean:.17g}", f"{pt.min_sd:.17g}"]
                           + [f"{v:.17g}" for v in pt.beta_mean] + [f"{v:.17g}" for v in pt.beta_sd])


def path_seed(seed_base: int, grid_index: int, run_index: int) -> int:
    return seed_base + grid_index * 1000 + run_index


def solution_path(
    data: RegressionData,
    cfg: ScadConfig = ScadConfig(),
    opt_config: OptConfig | None = None,
    runs: int = 50,
    bound: float = BETA_BOUND,
) -> SolutionPath:
    """Repeat seeded CSO-MA fits at every grid value and summarise them.

    A run whose minimiser sits within 1% of the box edge counts towards
    ``boundary_runs`` on its path point.
    """
    if runs < 1:
        raise ConfigurationError("runs must be positive")
    opt_config = opt_config or DEFAULT_PATH_CONFIG
    space = scad_space(data.p, bound, data.names)
    out = SolutionPath(names=tuple(data.names))
    for g, rho in enumerate(cfg.rho_grid):
        obj = scad_batch_objective(data, rho, cfg)
        betas, minima, flagged = [], [], 0
        for r in range(runs):
            res = minimize(obj, space, opt_config.with_(seed=path_seed(opt_config.seed, g, r)))
            betas.append(res.best_position)
            minima.append(res.best_value)
            flagged += bool(space.near_bounds(res.best_position).any())
        B, mins = np.array(betas), np.array(minima)
        sd = lambda a: a.std(axis=0, ddof=1) if runs > 1 else np.zeros_like(a[0])
        out.points.append(PathPoint(rho, B.mean(axis=0), sd(B), float(mins.mean()), float(sd(mins)), mins, flagged))
    return out


def synthetic_lake(seed: int = 20190301, n: int = 114) -> RegressionData:
    """Stand-in for the unavailable lake survey: 17 correlated covariates named as in the survey.

    Nitrogen species share a latent factor, cations share another, and the
    response is a small-scale sparse linear signal with noise, loosely
    following the magnitudes of a proportion-valued outcome.
    """
    rng = np.random.default_rng(seed)
    p = len(LAKE_VARIABLES)
    latent = rng.normal(size=(n, 3))
    X = rng.normal(size=(n, p))
    nitrogen = [LAKE_VARIABLES.index(v) for v in ("NH4-N", "NO3-N", "TN")]
    cations = [LAKE_VARIABLES.index(v) for v in ("Ca", "K", "Mg", "Na")]
    X[:, nitrogen] += 1.5 * latent[:, [0]]
    X[:, cations] += 1.0 * latent[:, [1]]
    X[:, LAKE_VARIABLES.index("Chi-a")] += 0.8 * latent[:, 2]
    X[:, LAKE_VARIABLES.index("Turbidity")] += 0.5 * latent[:, 2]
    X = X * rng.uniform(0.5, 20.0, p) + rng.uniform(0.0, 100.0, p)
    data = RegressionData(X, np.zeros(n), LAKE_VARIABLES).standardize()
    coef = np.zeros(p)
    for name, value in (("Depth", 0.019), ("DO", 0.022), ("Turbidity", -0.02), ("T", 0.05),
                        ("NH4-N", 0.017), ("NO3-N", 0.013), ("TP", 0.005), ("Na", -0.016)):
        coef[LAKE_VARIABLES.index(name)] = value
    y = 0.3 + data.X @ coef + rng.normal(0.0, 0.05, n)
    return RegressionData(data.X, y - y.mean(), LAKE_VARIABLES, True)


def load_regression(path, response: str) -> RegressionData:
    """CSV with a header of variable names; ``response`` names the outcome column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or response not in header:
            raise DataError(f"{path}: response column {response!r} not found")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
    if not rows or any(len(r) != len(header) for r in rows):
        raise DataError(f"{path}: rows must be non-empty and match the header width")
    A = np.array(rows)
    k = header.index(response)
    names = tuple(h for i, h in enumerate(header) if i != k)
    return RegressionData(np.delete(A, k, axis=1), A[:, k], names)
