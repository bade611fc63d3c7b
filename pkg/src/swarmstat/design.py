"""Locally D-optimal approximate designs for logistic models.

Continuous factors are mapped to coded units before monomials are formed
(affine onto [-1, 1] by default, or left as-is with ``coding="natural"``);
binary factors take the values -1 and 1.  A design particle stores ``k``
points followed by ``k`` raw weights that are normalised by their sum.
"""

from __future__ import annotations

import csv
import itertools
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainError
from .objective import Objective
from .space import BINARY, CONTINUOUS, SearchSpace
from .swarm import OptConfig, minimize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SINGULAR_RTOL = 1e-12
SINGULAR_LOGDET = -1e10
MERGE_DIST = 1e-2
DROP_WEIGHT = 1e-3


@dataclass(frozen=True)
class Factor:
    name: str
    kind: str = CONTINUOUS
    low: float = -1.0
    high: float = 1.0
    coding: str = "affine"

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise ConfigurationError(f"factor {self.name}: kind must be continuous or binary")
        if self.kind == BINARY and (self.low, self.high) != (-1.0, 1.0):
            raise ConfigurationError(f"binary factor {self.name} must range over -1 and 1")
        if not self.low < self.high:
            raise ConfigurationError(f"factor {self.name}: low must be below high")
        if self.coding not in ("affine", "natural"):
            raise ConfigurationError(f"factor {self.name}: unknown coding {self.coding!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Factors, ordered monomial terms (tuples of factor indices) and nominal theta."""

    factors: tuple
    terms: tuple
    theta0: np.ndarray

    def __post_init__(self):
        factors = tuple(self.factors)
        terms = tuple(tuple(int(i) for i in t) for t in self.terms)
        theta0 = np.asarray(self.theta0, dtype=float)
        if not terms or terms[0] != ():
            raise ConfigurationError("the term list must start with the intercept")
        F = len(factors)
        for t in terms:
            if any(not 0 <= i < F for i in t):
                raise ConfigurationError(f"term {t} refers to a missing factor")
        if theta0.shape != (len(terms),):
            raise ConfigurationError(f"theta0 has {theta0.size} entries for {len(terms)} terms")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "theta0", theta0)

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def p(self) -> int:
        return len(self.terms)

    @property
    def lower(self) -> np.ndarray:
        return np.array([f.low for f in self.factors])

    @property
    def upper(self) -> np.ndarray:
        return np.array([f.high for f in self.factors])

    def factor_space(self) -> SearchSpace:
        return SearchSpace(self.lower, self.upper, tuple(f.kind for f in self.factors),
                           tuple(f.name for f in self.factors))

    def term_labels(self) -> list[str]:
        return ["1" if not t else "*".join(self.factors[i].name for i in t) for t in self.terms]

    def code(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        lo, hi = self.lower, self.upper
        affine = np.array([f.coding == "affine" and f.kind == CONTINUOUS for f in self.factors])
        return np.where(affine, 2.0 * (X - lo) / (hi - lo) - 1.0, X)


def model_matrix(X, spec: ModelSpec) -> np.ndarray:
    """Rows of monomials for points ``X`` (..., F) in natural units; shape (..., p)."""
    C = spec.code(X)
    cols = [np.ones(C.shape[:-1])]
    for t in spec.terms[1:]:
        cols.append(np.prod(C[..., list(t)], axis=-1))
    return np.stack(cols, axis=-1)


def model_vector(point, spec: ModelSpec) -> np.ndarray:
    x = np.asarray(point, dtype=float)
    if x.shape != (spec.n_factors,):
        raise DomainError(f"point has shape {x.shape}, expected ({spec.n_factors},)")
    if not spec.factor_space().contains(x, atol=1e-12):
        raise DomainError(f"point {x} lies outside the factor ranges")
    return model_matrix(x, spec)


@dataclass
class ApproximateDesign:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[0] != self.weights.size:
            raise DomainError(f"{self.points.shape[0]} points but {self.weights.size} weights")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise DomainError("weights must be non-negative and sum to 1")

    @property
    def k(self) -> int:
        return self.weights.size

    def check(self, spec: ModelSpec) -> None:
        space = spec.factor_space()
        for x in self.points:
            if not space.contains(x, atol=1e-12):
                raise DomainError(f"design point {x} lies outside the factor ranges")
            if np.any(np.abs(x[space._bin_mask]) != 1.0):
                raise DomainError(f"binary coordinates of {x} must be -1 or 1")

    def write_csv(self, path, spec: ModelSpec) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f.name for f in spec.factors] + ["w"])
            for x, wt in zip(self.points, self.weights):
                w.writerow([f"{v:.17g}" for v in x] + [f"{wt:.17g}"])


def _weight_factor(eta):
    s = expit(eta)
    return s * (1.0 - s)


def _info_batch(X: np.ndarray, W: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Information matrices for designs X (K, k, F) with weights W (K, k)."""
    Fm = model_matrix(X, spec)  # (K, k, p)
    lam = W * _weight_factor(Fm @ spec.theta0)
    return np.einsum("Kk,Kki,Kkj->Kij", lam, Fm, Fm)


def information_matrix(design: ApproximateDesign, spec: ModelSpec) -> np.ndarray:
    M = _info_batch(design.points[None], design.weights[None], spec)[0]
    return 0.5 * (M + M.T)


def _logdet_batch(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ev = np.linalg.eigvalsh(M)
    top = ev[:, -1]
    singular = (top <= 0) | (ev[:, 0] < SINGULAR_RTOL * np.abs(top))
    with np.errstate(divide="ignore", invalid="ignore"):
        ld = np.sum(np.log(np.where(singular[:, None], 1.0, ev)), axis=1)
    return np.where(singular, SINGULAR_LOGDET, ld), singular


def d_criterion(design: ApproximateDesign, spec: ModelSpec) -> float:
    """log det M, or ``SINGULAR_LOGDET`` when M is numerically singular."""
    return float(_logdet_batch(information_matrix(design, spec)[None])[0][0])


def is_singular(design: ApproximateDesign, spec: ModelSpec) -> bool:
    return bool(_logdet_batch(information_matrix(design, spec)[None])[1][0])


def sensitivity(x, design: ApproximateDesign, spec: ModelSpec):
    """Sensitivity ``d(x, xi)`` at one point (F,) or many (n, F)."""
    M = information_matrix(design, spec)
    if _logdet_batch(M[None])[1][0]:
        raise DomainError("information matrix is singular")
    X = np.asarray(x, dtype=float)
    Fm = model_matrix(X, spec)
    Minv_f = np.linalg.solve(M, np.atleast_2d(Fm).T).T.reshape(Fm.shape)
    d = _weight_factor(Fm @ spec.theta0) * np.sum(Fm * Minv_f, axis=-1)
    return float(d) if np.ndim(d) == 0 else d


# --- design search -----------------------------------------------------------

def design_space(spec: ModelSpec, k: int) -> SearchSpace:
    fs = spec.factor_space()
    lower = np.concatenate([np.tile(fs.lower, k), np.zeros(k)])
    upper = np.concatenate([np.tile(fs.upper, k), np.ones(k)])
    kind = tuple(fs.kind) * k + (CONTINUOUS,) * k
    return SearchSpace(lower, upper, kind)


def decode(P: np.ndarray, spec: ModelSpec, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Split particles (K, k F + k) into points (K, k, F) and normalised weights (K, k)."""
    P = np.atleast_2d(P)
    F = spec.n_factors
    X = P[:, : k * F].reshape(-1, k, F)
    raw = P[:, k * F :]
    s = raw.sum(axis=1, keepdims=True)
    W = np.where(s < 1e-8, 1.0 / k, raw / np.where(s < 1e-8, 1.0, s))
    return X, W


def design_objective(spec: ModelSpec, k: int) -> Objective:
    def neg_logdet(P):
        X, W = decode(np.asarray(P, dtype=float), spec, k)
        return -_logdet_batch(_info_batch(X, W, spec))[0]

    return Objective(neg_logdet, name="neg_log_det", vectorized=True)


def prune(design: ApproximateDesign, spec: ModelSpec, merge_dist: float = MERGE_DIST,
          drop_weight: float = DROP_WEIGHT) -> ApproximateDesign:
    """Merge points closer than ``merge_dist`` in coded units, then drop tiny weights."""
    X, w = design.points.copy(), design.weights.copy()
    C = spec.code(X)
    pts, wts, used = [], [], np.zeros(len(w), dtype=bool)
    for i in np.argsort(-w, kind="stable"):
        if used[i]:
            continue
        group = (~used) & (np.linalg.norm(C - C[i], axis=1) < merge_dist)
        used |= group
        gw = w[group].sum()
        # weight-averaged location; the heaviest member supplies binary levels
        x = (w[group] @ X[group]) / gw if gw > 0 else X[i].copy()
        x[spec.factor_space()._bin_mask] = X[i][spec.factor_space()._bin_mask]
        pts.append(x)
        wts.append(gw)
    pts, wts = np.array(pts), np.array(wts)
    keep = wts >= drop_weight
    if not keep.any():
        keep = wts == wts.max()
    pts, wts = pts[keep], wts[keep]
    return ApproximateDesign(pts, wts / wts.sum())


@dataclass
class DesignResult:
    design: ApproximateDesign
    raw: ApproximateDesign
    log_det: float
    evals_used: int
    seed: int


def default_design_config(k: int, particles: int = 200, seed: int = 0, iterations: int = 3000) -> OptConfig:
    return OptConfig(swarm_size=particles, max_evals=particles + iterations * (particles // 2 + 1),
                     tolerance=1e-5, seed=seed, stall_window=20)


def design_search(spec: ModelSpec, k: int, opt_config: OptConfig | None = None) -> DesignResult:
    if k < 1:
        raise ConfigurationError("k must be positive")
    opt_config = opt_config or default_design_config(k)
    res = minimize(design_objective(spec, k), design_space(spec, k), opt_config)
    X, W = decode(res.best_position[None], spec, k)
    raw = ApproximateDesign(X[0], W[0] / W[0].sum())
    pruned = prune(raw, spec)
    return DesignResult(pruned, raw, d_criterion(pruned, spec), res.evals_used, opt_config.seed)


# --- equivalence-theorem check -------------------------------------------------

def sensitivity_grid(spec: ModelSpec, levels: int = 5) -> np.ndarray:
    """All binary sign patterns crossed with an evenly spaced grid on continuous factors."""
    axes = []
    for f in spec.factors:
        axes.append(np.array([-1.0, 1.0]) if f.kind == BINARY else np.linspace(f.low, f.high, levels))
    return np.array(list(itertools.product(*axes)))


@dataclass
class EfficiencyBound:
    atwood: float
    exponential: float
    d_max: float
    argmax: np.ndarray
    grid_max: float


def d_efficiency_lower_bound(design: ApproximateDesign, spec: ModelSpec, inner_config: OptConfig | None = None,
                             grid_levels: int = 5) -> EfficiencyBound:
    """Bound from the largest sensitivity over the factor space.

    ``atwood`` is p / d_max and ``exponential`` is exp(1 - d_max / p), both
    clipped to (0, 1].  d_max combines a swarm search with a grid scan.
    """
    p = spec.p
    M = information_matrix(design, spec)
    if _logdet_batch(M[None])[1][0]:
        raise DomainError("information matrix is singular")
    Minv = np.linalg.inv(M)
    theta0 = spec.theta0

    def neg_d(X):
        Fm = model_matrix(np.asarray(X, dtype=float), spec)
        return -_weight_factor(Fm @ theta0) * np.einsum("ni,ij,nj->n", Fm, Minv, Fm)

    space = spec.factor_space()
    inner_config = inner_config or OptConfig(swarm_size=60, max_evals=60 + 300 * 31, tolerance=0.0)
    res = minimize(Objective(neg_d, name="neg_sensitivity", vectorized=True), space, inner_config)
    G = np.vstack([sensitivity_grid(spec, grid_levels), design.points])
    gd = -neg_d(G)
    d_max, arg = -res.best_value, res.best_position
    if gd.max() > d_max:
        d_max, arg = float(gd.max()), G[int(np.argmax(gd))]
    d_max = max(d_max, 1e-300)
    return EfficiencyBound(min(1.0, p / d_max), min(1.0, float(np.exp(1.0 - d_max / p))),
                           float(d_max), np.asarray(arg), float(gd.max()))


# --- spec files ----------------------------------------------------------------

def _parse_term(label: str, names: Sequence[str]) -> tuple:
    label = label.strip()
    if label == "1":
        return ()
    idx = []
    for part in label.split("*"):
        part = part.strip()
        if part not in names:
            raise ConfigurationError(f"term {label!r} refers to unknown factor {part!r}")
        idx.append(list(names).index(part))
    return tuple(idx)


def spec_from_mapping(doc: dict) -> ModelSpec:
    try:
        factors = tuple(Factor(f["name"], f.get("kind", CONTINUOUS), float(f.get("low", -1.0)),
                               float(f.get("high", 1.0)), f.get("coding", "affine"))
                        for f in doc["factors"])
        names = [f.name for f in factors]
        terms = tuple(_parse_term(t, names) for t in doc["terms"])
        theta0 = doc["theta0"]
    except KeyError as exc:
        raise ConfigurationError(f"model spec is missing {exc}") from exc
    return ModelSpec(factors, terms, theta0)


def load_spec(path) -> ModelSpec:
    """Read a TOML model spec: ``[[factors]]`` tables, ``terms`` labels and ``theta0``."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return spec_from_mapping(doc)


def car_refuel_spec() -> ModelSpec:
    return load_spec(Path(__file__).parent / "data" / "car_refuel.toml")


def logistic_line_spec(theta0=(0.0, 1.0), low: float = -3.0, high: float = 3.0) -> ModelSpec:
    """Intercept plus one uncoded continuous factor."""
    return ModelSpec((Factor("x", CONTINUOUS, low, high, "natural"),), ((), (0,)), theta0)
