"""EM imputation for bivariate normal responses with two-compartment mean curves.

The covariance is treated as known.  The E-step fills missing cells with
their conditional normal means; the M-step maximises the expected complete
data log-likelihood over ``theta = (theta1, theta2, theta3)`` with a swarm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError
from .objective import Objective
from .space import SearchSpace
from .swarm import OptConfig, minimize

THETA_BOX = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
# covariance used with the shipped nine-row table
COMPARTMENT_SIGMA = np.array([[0.075, -0.06], [-0.06, 0.06]])
# objective value where theta4 is undefined (parts of the box boundary)
INFEASIBLE = 1e300


def theta4(theta) -> float:
    t1, t2, t3 = (float(v) for v in theta[:3])
    den = (t3 - t2) * t1 + t2
    if den == 0.0:
        raise DomainError(f"theta4 undefined: (theta3 - theta2) * theta1 + theta2 = 0 at {tuple(theta[:3])}")
    return (t3 - t2) * t1 * (1.0 - t1) / den


def _means_batch(x: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Means for theta rows ``T`` (k, 3) at times ``x`` (n,); shape ``(k, n, 2)``.

    Rows with an undefined theta4 get NaN.
    """
    t1, t2, t3 = T[:, 0:1], T[:, 1:2], T[:, 2:3]
    den = (t3 - t2) * t1 + t2
    with np.errstate(divide="ignore", invalid="ignore"):
        t4 = np.where(den != 0.0, (t3 - t2) * t1 * (1.0 - t1) / den, np.nan)
    e2 = np.exp(-t2 * x)
    e3 = np.exp(-t3 * x)
    mu1 = t1 * e2 + (1.0 - t1) * e3
    mu2 = 1.0 - (t1 + t4) * e2 + (t1 + t4 - 1.0) * e3
    return np.stack([mu1, mu2], axis=-1)


def compartment_means(x, theta) -> tuple:
    t4 = theta4(theta)
    t1, t2, t3 = (float(v) for v in theta[:3])
    x = np.asarray(x, dtype=float)
    e2, e3 = np.exp(-t2 * x), np.exp(-t3 * x)
    mu1 = t1 * e2 + (1.0 - t1) * e3
    mu2 = 1.0 - (t1 + t4) * e2 + (t1 + t4 - 1.0) * e3
    if mu1.ndim == 0:
        return float(mu1), float(mu2)
    return mu1, mu2


def _check_sigma(Sigma) -> np.ndarray:
    S = np.asarray(Sigma, dtype=float)
    if S.shape != (2, 2):
        raise DomainError(f"Sigma must be 2 x 2, got {S.shape}")
    if not np.allclose(S, S.T, rtol=0, atol=1e-12):
        raise DomainError("Sigma must be symmetric")
    if S[0, 0] <= 0 or S[1, 1] <= 0 or np.linalg.det(S) <= 0:
        raise DomainError("Sigma must be positive definite")
    return S


@dataclass
class BivariateData:
    """Times ``x``, responses ``y`` (NaN marks a missing cell) and known ``Sigma``."""

    x: np.ndarray
    y: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).reshape(-1, 2)
        if self.y.shape[0] != self.x.size:
            raise DataError(f"{self.x.size} times but {self.y.shape[0]} response rows")
        self.Sigma = _check_sigma(self.Sigma)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.y)

    @property
    def n(self) -> int:
        return self.x.size


def e_step(data: BivariateData, theta) -> tuple[np.ndarray, np.ndarray]:
    """Conditional means of missing cells and conditional covariances per row."""
    S = data.Sigma
    mu = np.column_stack(compartment_means(data.x, theta))
    miss = data.missing
    y = data.y.copy()
    c = np.zeros((data.n, 2, 2))
    for k in (0, 1):
        o = 1 - k
        rows = miss[:, k] & ~miss[:, o]
        y[rows, k] = mu[rows, k] + S[k, o] / S[o, o] * (data.y[rows, o] - mu[rows, o])
        c[rows, k, k] = S[k, k] - S[k, o] ** 2 / S[o, o]
    both = miss[:, 0] & miss[:, 1]
    y[both] = mu[both]
    c[both] = S
    return y, c


def q_function(theta, y_filled: np.ndarray, c: np.ndarray, data: BivariateData, with_trace: bool = False) -> float:
    """Expected complete-data log-likelihood up to constants.

    Only the theta-dependent quadratic form is kept unless ``with_trace`` adds
    the theta-free ``-1/2 sum tr(Sigma^-1 c_i)`` term.
    """
    S = np.asarray(data.Sigma, dtype=float)
    if abs(np.linalg.det(S)) < 1e-300:
        raise DomainError("Sigma is singular")
    Sinv = np.linalg.inv(S)
    mu = np.column_stack(compartment_means(data.x, theta))
    r = y_filled - mu
    q = -0.5 * float(np.einsum("ni,ij,nj->", r, Sinv, r))
    if with_trace:
        q -= 0.5 * float(np.einsum("ij,nji->", Sinv, c))
    return q


def q_objective(y_filled: np.ndarray, data: BivariateData) -> Objective:
    """Negated quadratic part of the Q-function, batched over theta rows."""
    Sinv = np.linalg.inv(data.Sigma)
    x = data.x

    def neg_q(T):
        r = y_filled[None] - _means_batch(x, np.asarray(T, dtype=float))
        val = 0.5 * np.einsum("kni,ij,knj->k", r, Sinv, r)
        return np.where(np.isfinite(val), val, INFEASIBLE)

    return Objective(neg_q, name="neg_q", vectorized=True)


def observed_loglik(data: BivariateData, theta) -> float:
    """Log-likelihood of the observed cells only (marginals for partial rows)."""
    S = data.Sigma
    mu = np.column_stack(compartment_means(data.x, theta))
    miss = data.missing
    ll = 0.0
    full = ~miss.any(axis=1)
    if full.any():
        r = data.y[full] - mu[full]
        Sinv = np.linalg.inv(S)
        ll += -0.5 * float(np.einsum("ni,ij,nj->", r, Sinv, r))
        ll += full.sum() * (-math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(S)))
    for k in (0, 1):
        rows = ~miss[:, k] & miss[:, 1 - k]
        if rows.any():
            r = data.y[rows, k] - mu[rows, k]
            ll += float(np.sum(-0.5 * r**2 / S[k, k])) - rows.sum() * 0.5 * math.log(2 * math.pi * S[k, k])
    return ll


@dataclass
class EMResult:
    theta: np.ndarray
    y_imputed: np.ndarray
    loglik_trace: list = field(default_factory=list)
    theta_trace: list = field(default_factory=list)
    iterations: int = 0


def em_fit(
    data: BivariateData,
    theta_init,
    em_iters: int = 10,
    opt_config: OptConfig | None = None,
    box=THETA_BOX,
    theta_tol: float = 1e-6,
) -> EMResult:
    """Alternate E-steps with swarm M-steps.

    An M-step proposal is only accepted if it does not lower Q relative to the
    current theta, which keeps the observed-data likelihood monotone.
    """
    if em_iters < 1:
        raise DomainError("em_iters must be at least 1")
    # 200 CSO-MA iterations with a 20-particle swarm: 20 + 200 * 11 evaluations
    opt_config = opt_config or OptConfig(swarm_size=20, max_evals=2220, tolerance=0.0)
    space = SearchSpace(np.array([b[0] for b in box]), np.array([b[1] for b in box]),
                        names=("theta1", "theta2", "theta3"))
    theta = np.asarray(theta_init, dtype=float).copy()
    theta4(theta)
    result = EMResult(theta, data.y.copy(), [observed_loglik(data, theta)], [theta.copy()])
    for it in range(em_iters):
        y_filled, _ = e_step(data, theta)
        obj = q_objective(y_filled, data)
        res = minimize(obj, space, opt_config.with_(seed=opt_config.seed + it))
        new = res.best_position
        if res.best_value > obj(theta):
            new = theta
        step = float(np.max(np.abs(new - theta)))
        theta = new
        result.iterations = it + 1
        result.theta_trace.append(theta.copy())
        result.loglik_trace.append(observed_loglik(data, theta))
        if step < theta_tol:
            break
    result.theta = theta
    result.y_imputed = e_step(data, theta)[0]
    return result


def complete_case_covariance(data_y: np.ndarray) -> np.ndarray:
    """Sample covariance (denominator n - 1) of fully observed rows."""
    y = np.asarray(data_y, dtype=float)
    full = y[~np.isnan(y).any(axis=1)]
    if full.shape[0] < 3:
        raise DataError("need at least three complete rows to estimate Sigma")
    return np.cov(full, rowvar=False, ddof=1)


def load_bivariate(path, Sigma=None) -> BivariateData:
    """Read an ``x,y1,y2`` CSV; empty or ``NA`` cells are missing.

    Without ``Sigma`` the covariance is estimated from complete rows.
    """
    path = Path(path)
    xs, ys = [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y1", "y2"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns x,y1,y2")
        for line, row in enumerate(reader, start=2):
            try:
                xs.append(float(row["x"]))
                ys.append([_cell(row["y1"]), _cell(row["y2"])])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: {exc}") from exc
    y = np.array(ys)
    if Sigma is None:
        Sigma = complete_case_covariance(y)
    return BivariateData(np.array(xs), y, Sigma)


def _cell(s: str) -> float:
    s = (s or "").strip()
    return math.nan if s in ("", "NA", "nan", "NaN") else float(s)


def simulate_bivariate(theta, x, Sigma, n_missing: int, rng: np.random.Generator) -> BivariateData:
    """Draw responses around the compartment means and blank ``n_missing`` random cells."""
    x = np.asarray(x, dtype=float)
    mu = np.column_stack(compartment_means(x, theta))
    y = mu + rng.multivariate_normal(np.zeros(2), Sigma, size=x.size)
    cells = rng.choice(2 * x.size, size=n_missing, replace=False)
    y.reshape(-1)[cells] = np.nan
    return BivariateData(x, y, Sigma)


def compartment_table_path() -> Path:
    """Nine-row two-compartment dataset with five masked cells (shipped with the package)."""
    return Path(__file__).parent / "data" / "compartment_table.csv"
