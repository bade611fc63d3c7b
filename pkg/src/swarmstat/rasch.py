"""Rasch model marginal likelihood with a N(0, sigma^2) ability prior.

The ability integral is evaluated by adaptive Gauss-Hermite quadrature, once
per raw score.  Parameter vectors are ``(beta_1, ..., beta_I, sigma2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DataError, DomainError
from .objective import Objective
from .space import SearchSpace
from .swarm import OptConfig, OptResult, minimize

DEFAULT_NODES = 21
BETA_BOUND = 6.0
SIGMA2_BOUNDS = (1e-3, 25.0)


@dataclass(frozen=True)
class RaschData:
    responses: np.ndarray

    def __post_init__(self):
        Y = np.asarray(self.responses)
        if Y.ndim != 2 or Y.shape[0] < 1 or Y.shape[1] < 1:
            raise DataError(f"responses must be an N x I matrix, got shape {Y.shape}")
        if not np.all((Y == 0) | (Y == 1)):
            raise DataError("responses must be strictly 0/1")
        object.__setattr__(self, "responses", Y.astype(float))

    @property
    def n_persons(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]


@dataclass(frozen=True)
class RaschParams:
    beta: np.ndarray
    sigma2: float

    def vector(self) -> np.ndarray:
        return np.append(np.asarray(self.beta, dtype=float), self.sigma2)

    @classmethod
    def from_vector(cls, v) -> "RaschParams":
        v = np.asarray(v, dtype=float)
        return cls(v[:-1].copy(), float(v[-1]))


def rasch_item_prob(theta, beta_i):
    p = 1.0 / (1.0 + np.exp(-(np.asarray(theta, dtype=float) - beta_i)))
    return float(p) if np.ndim(p) == 0 else p


@lru_cache(maxsize=32)
def _gauss_hermite(nodes: int):
    u, w = np.polynomial.hermite.hermgauss(nodes)
    # weights for integrating f(u) directly rather than f(u) exp(-u^2)
    return u, np.log(w) + u * u


def _score_log_integrals(P: np.ndarray, I: int, nodes: int) -> np.ndarray:
    """``A[k, s] = log E[exp(theta s - sum_i log(1 + e^(theta - beta_i)))]`` under N(0, sigma2).

    Each integrand is log-concave in theta; its mode and curvature place the
    Gauss-Hermite nodes (adaptive quadrature).  Shape ``(k, I + 1)``.
    """
    beta = P[:, :-1]
    sigma2 = P[:, -1]
    s = np.arange(I + 1, dtype=float)[None, :]  # (1, S)
    prec = 1.0 / sigma2[:, None]
    theta = np.zeros((P.shape[0], I + 1))
    for _ in range(50):
        pr = expit(theta[:, :, None] - beta[:, None, :])
        grad = s - pr.sum(axis=2) - theta * prec
        hess = -(pr * (1.0 - pr)).sum(axis=2) - prec
        step = np.clip(grad / hess, -2.0, 2.0)
        theta = theta - step
        if np.max(np.abs(step)) < 1e-12:
            break
    pr = expit(theta[:, :, None] - beta[:, None, :])
    scale = 1.0 / np.sqrt((pr * (1.0 - pr)).sum(axis=2) + prec)  # (k, S)
    u, logw = _gauss_hermite(nodes)
    th = theta[:, :, None] + np.sqrt(2.0) * scale[:, :, None] * u  # (k, S, G)
    a = np.logaddexp(0.0, th[..., None] - beta[:, None, None, :]).sum(axis=3)
    log_f = th * s[:, :, None] - a - 0.5 * th * th * prec[:, :, None]
    log_norm = 0.5 * np.log(2.0 * np.pi * sigma2)[:, None]
    return logsumexp(log_f + logw, axis=2) + np.log(np.sqrt(2.0) * scale) - log_norm


def _batch_nll(P: np.ndarray, Y: np.ndarray, nodes: int) -> np.ndarray:
    """NLL for rows of ``P`` = (beta..., sigma2); returns shape ``(k,)``."""
    # a person's marginal depends on the responses only through the score and Y @ beta
    score = Y.sum(axis=1).astype(int)
    counts = np.bincount(score, minlength=Y.shape[1] + 1)
    A = _score_log_integrals(P, Y.shape[1], nodes)
    return (Y.sum(axis=0) @ P[:, :-1].T) - A @ counts


def rasch_marginal_nll(params: RaschParams, data: RaschData, nodes: int = DEFAULT_NODES) -> float:
    if nodes < 5:
        raise DomainError(f"need at least 5 quadrature nodes, got {nodes}")
    if not params.sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {params.sigma2}")
    beta = np.asarray(params.beta, dtype=float)
    if beta.shape != (data.n_items,):
        raise DomainError(f"expected {data.n_items} item difficulties, got {beta.shape}")
    return float(_batch_nll(params.vector()[None, :], data.responses, nodes)[0])


def rasch_space(data: RaschData) -> SearchSpace:
    I = data.n_items
    lower = np.append(np.full(I, -BETA_BOUND), SIGMA2_BOUNDS[0])
    upper = np.append(np.full(I, BETA_BOUND), SIGMA2_BOUNDS[1])
    names = tuple(f"beta_{i + 1}" for i in range(I)) + ("sigma2",)
    return SearchSpace(lower, upper, names=names)


def rasch_objective(data: RaschData, nodes: int = DEFAULT_NODES) -> Objective:
    Y = data.responses

    def nll(P):
        return _batch_nll(np.asarray(P, dtype=float), Y, nodes)

    return Objective(nll, name="rasch_marginal_nll", vectorized=True)


@dataclass
class RaschFit:
    params: RaschParams
    nll: float
    boundary: tuple  # names of coordinates within 1% of a box edge
    result: OptResult


def fit_rasch(data: RaschData, opt_config: OptConfig | None = None, nodes: int = DEFAULT_NODES) -> RaschFit:
    space = rasch_space(data)
    res = minimize(rasch_objective(data, nodes), space, opt_config or OptConfig(swarm_size=50, max_evals=20_000))
    flags = space.near_bounds(res.best_position)
    return RaschFit(RaschParams.from_vector(res.best_position), res.best_value,
                    tuple(n for n, f in zip(space.names, flags) if f), res)


def simulate_rasch(beta, sigma2: float, n_persons: int, rng: np.random.Generator) -> RaschData:
    beta = np.asarray(beta, dtype=float)
    theta = rng.normal(0.0, np.sqrt(sigma2), size=n_persons)
    p = 1.0 / (1.0 + np.exp(-(theta[:, None] - beta[None, :])))
    return RaschData((rng.random(p.shape) < p).astype(float))


def load_responses(path) -> RaschData:
    """Read an N x I matrix of 0/1 without a header."""
    path = Path(path)
    try:
        Y = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return RaschData(Y)
