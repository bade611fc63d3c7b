"""Hill-shaped single-cell generalized trend model (zero-inflated negative binomial).

Parameter vectors are laid out as ``(mu_mag, k1, k2, t0, phi, alpha, beta)``
with an optional trailing baseline ``b`` when it is estimated.
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln, log_expit, xlogy

from .errors import DataError, DomainError
from .objective import Objective
from .space import CONTINUOUS, INTEGER, SearchSpace

PARAM_NAMES = ("mu_mag", "k1", "k2", "t0", "phi", "alpha", "beta")
LOG_FLOOR = np.log(1e-300)
K_MAX = 500.0
PHI_MAX = 100.0
LINK_BOUND = 10.0
B_BOUND = 5.0


@dataclass(frozen=True)
class ScgtmParams:
    mu_mag: float
    k1: float
    k2: float
    t0: float
    phi: int
    alpha: float
    beta: float
    b: float = 0.0

    def vector(self, with_b: bool = False) -> np.ndarray:
        v = np.array(astuple(self), dtype=float)
        return v if with_b else v[:7]

    @classmethod
    def from_vector(cls, v) -> "ScgtmParams":
        v = [float(a) for a in v]
        b = v[7] if len(v) > 7 else 0.0
        return cls(v[0], v[1], v[2], v[3], int(round(v[4])), v[5], v[6], b)


@dataclass(frozen=True)
class CellData:
    y: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        t = np.asarray(self.t, dtype=float).ravel()
        if y.size == 0 or y.size != t.size:
            raise DataError(f"need equally long, non-empty y and t (got {y.size} and {t.size})")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("counts must be non-negative integers")
        if not np.all(np.isfinite(t)):
            raise DataError("pseudotimes must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)

    def __len__(self):
        return self.y.size

    @property
    def log1p_range(self) -> tuple[float, float]:
        ly = np.log1p(self.y)
        return float(ly.min()), float(ly.max())


def hill_mean(t, params: ScgtmParams):
    """Mean expression ``tau`` at pseudotime ``t`` (hill trend on the log1p scale)."""
    t = np.asarray(t, dtype=float)
    k = np.where(t <= params.t0, params.k1, params.k2)
    log1p_tau = params.b + params.mu_mag * np.exp(-k * (t - params.t0) ** 2)
    tau = np.maximum(np.expm1(log1p_tau), 0.0)
    return float(tau) if tau.ndim == 0 else tau


def zero_inflation_prob(tau, alpha: float, beta: float):
    """Zero-inflation probability with logit ``alpha * log(tau + 1) + beta``."""
    z = alpha * np.log1p(np.asarray(tau, dtype=float)) + beta
    p = 1.0 / (1.0 + np.exp(-z))
    return float(p) if np.ndim(p) == 0 else p


def _cell_loglik(P: np.ndarray, y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Per-cell log-likelihood for a batch of parameter rows; shape ``(k, C)``."""
    mu, k1, k2, t0, phi, alpha, beta = (P[:, j : j + 1] for j in range(7))
    b = P[:, 7:8] if P.shape[1] > 7 else 0.0
    dt2 = (t - t0) ** 2
    k = np.where(t <= t0, k1, k2)
    log1p_tau = b + mu * np.exp(-k * dt2)
    tau = np.maximum(np.expm1(log1p_tau), 0.0)
    log1p_tau = np.log1p(tau)

    log_nb = (
        gammaln(phi + y)
        - gammaln(phi)
        - gammaln(y + 1.0)
        + xlogy(y, tau)
        - y * np.log(phi + tau)
        - phi * np.log1p(tau / phi)
    )
    z = alpha * log1p_tau + beta
    log_p = log_expit(z)
    log_1mp = log_expit(-z)
    zero = y == 0
    ll = np.where(zero, np.logaddexp(log_1mp + log_nb, log_p), log_1mp + log_nb)
    return np.maximum(ll, LOG_FLOOR)


def check_params(params: ScgtmParams, data: CellData) -> None:
    lo, hi = data.log1p_range
    if not lo <= params.mu_mag <= hi:
        raise DomainError(f"mu_mag={params.mu_mag} outside [{lo}, {hi}]")
    if params.k1 < 0:
        raise DomainError(f"k1={params.k1} must be >= 0")
    if params.k2 < 0:
        raise DomainError(f"k2={params.k2} must be >= 0")
    if not data.t.min() <= params.t0 <= data.t.max():
        raise DomainError(f"t0={params.t0} outside [{data.t.min()}, {data.t.max()}]")
    if params.phi < 1 or params.phi != int(params.phi):
        raise DomainError(f"phi={params.phi} must be a positive integer")


def scgtm_nll(params: ScgtmParams, data: CellData) -> float:
    """Negative log-likelihood of the hill-shaped zero-inflated NB model."""
    check_params(params, data)
    P = params.vector(with_b=True)[None, :]
    return float(-np.sum(_cell_loglik(P, data.y, data.t)))


def scgtm_space(data: CellData, estimate_b: bool = False) -> SearchSpace:
    lo, hi = data.log1p_range
    if hi <= lo:
        raise DomainError("all counts are equal, so the mu_mag range is empty")
    tmin, tmax = float(data.t.min()), float(data.t.max())
    if tmax <= tmin:
        raise DomainError("all pseudotimes are equal, so the t0 range is empty")
    bounds = [(lo, hi), (0.0, K_MAX), (0.0, K_MAX), (tmin, tmax), (1.0, PHI_MAX),
              (-LINK_BOUND, LINK_BOUND), (-LINK_BOUND, LINK_BOUND)]
    kind = [CONTINUOUS] * 4 + [INTEGER] + [CONTINUOUS] * 2
    names = list(PARAM_NAMES)
    if estimate_b:
        bounds.append((-B_BOUND, B_BOUND))
        kind.append(CONTINUOUS)
        names.append("b")
    lower, upper = zip(*bounds)
    return SearchSpace(np.array(lower), np.array(upper), tuple(kind), tuple(names))


def scgtm_objective(data: CellData) -> Objective:
    """Vectorized NLL over parameter rows (``7`` or ``8`` columns)."""
    y, t = data.y, data.t

    def nll(P):
        return -np.sum(_cell_loglik(np.asarray(P, dtype=float), y, t), axis=1)

    return Objective(nll, name="scgtm_nll", vectorized=True)


def simulate_gene(params: ScgtmParams, t, rng: np.random.Generator) -> CellData:
    """Draw counts from the model at the given pseudotimes."""
    t = np.asarray(t, dtype=float)
    tau = np.atleast_1d(hill_mean(t, params))
    p = np.atleast_1d(zero_inflation_prob(tau, params.alpha, params.beta))
    # NB(mean tau, size phi) as a gamma-Poisson mixture
    lam = rng.gamma(params.phi, tau / params.phi)
    y = rng.poisson(lam)
    y[rng.random(t.size) < p] = 0
    return CellData(y, t)


def load_cells(path) -> CellData:
    """Read a ``t,y`` CSV with a header row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "y"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header with columns 't' and 'y'")
        try:
            rows = [(float(r["t"]), float(r["y"])) for r in reader]
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    t, y = map(np.array, zip(*rows))
    return CellData(y, t)
