"""Markov renewal processes with Cox-type transition intensities.

States are numbered ``0 .. r-1``.  Covariates live in an array of shape
``(M, r, r, d)``: ``Z[m, i, j]`` is the vector attached to transition
``i -> j`` of individual ``m``.

The estimating function is

    U(beta) = sum over observed jumps i -> j at sojourn x of
              Z_ijm - S1_ij(x, beta) / S0_ij(x, beta)

where the risk set of channel ``(i, j)`` at sojourn ``x`` holds every visit to
state ``i`` (any individual) whose sojourn is at least ``x``.  Each channel's
sojourns are sorted once, so evaluating ``U`` for a batch of ``beta`` values is
a cumulative sum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, StructureError
from .objective import Objective
from .space import SearchSpace
from .swarm import OptConfig, OptResult, minimize

ABSORPTION = "absorption"
HORIZON = "horizon"
BETA_BOUND = 5.0


@dataclass(frozen=True)
class TransitionStructure:
    r: int
    allowed: tuple[tuple[int, int], ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.r < 2:
            raise StructureError("need at least two states")
        allowed = tuple(sorted({(int(i), int(j)) for i, j in self.allowed}))
        for i, j in allowed:
            if not (0 <= i < self.r and 0 <= j < self.r):
                raise StructureError(f"transition {(i, j)} references a state outside 0..{self.r - 1}")
            if i == j:
                raise StructureError(f"self-transition {(i, j)} is not allowed")
        if not allowed:
            raise StructureError("at least one state must have an outgoing transition")
        if self.names and len(self.names) != self.r:
            raise StructureError("names must match the number of states")
        object.__setattr__(self, "allowed", allowed)

    @property
    def absorbing(self) -> tuple[int, ...]:
        src = {i for i, _ in self.allowed}
        return tuple(s for s in range(self.r) if s not in src)

    def targets(self, i: int) -> list[int]:
        return [j for a, j in self.allowed if a == i]


def preset(name: str) -> TransitionStructure:
    """``bmt5`` (transplant model), ``complete3`` or ``twostate``."""
    if name == "bmt5":
        # TX, AGVHD, CGVHD transient; Relapse and Death absorbing
        tx, ag, cg, rel, death = range(5)
        allowed = [(tx, ag), (tx, cg), (tx, rel), (tx, death),
                   (ag, cg), (ag, rel), (ag, death), (cg, rel), (cg, death)]
        return TransitionStructure(5, tuple(allowed), ("TX", "AGVHD", "CGVHD", "Relapse", "Death"))
    if name == "complete3":
        return TransitionStructure(3, tuple((i, j) for i in range(3) for j in range(3) if i != j))
    if name == "twostate":
        return TransitionStructure(2, ((0, 1),), ("alive", "dead"))
    raise StructureError(f"unknown preset {name!r}; expected bmt5, complete3 or twostate")


@dataclass(frozen=True)
class RenewalPath:
    states: tuple[int, ...]
    times: tuple[float, ...]
    terminated_by: str = HORIZON
    horizon: float = math.inf

    def __post_init__(self):
        if len(self.states) != len(self.times) or not self.states:
            raise DataError("a path needs one entry time per state")
        if self.times[0] != 0.0:
            raise DataError("paths start at time 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise DataError("entry times must be strictly increasing")
        if any(a == b for a, b in zip(self.states, self.states[1:])):
            raise DataError("consecutive states must differ")
        if self.times[-1] > self.horizon:
            raise DataError("jumps after the observation horizon")

    @property
    def open_sojourn(self) -> float | None:
        """Time spent in the last state before the horizon, if the path was cut there."""
        if self.terminated_by != HORIZON or math.isinf(self.horizon):
            return None
        return self.horizon - self.times[-1]

    @property
    def n_jumps(self) -> int:
        return len(self.states) - 1

    def jumps(self):
        """Yield ``(from_state, to_state, sojourn, entry_time)`` for each jump."""
        for n in range(1, len(self.states)):
            yield self.states[n - 1], self.states[n], self.times[n] - self.times[n - 1], self.times[n]


@dataclass(frozen=True)
class CovariateSet:
    Z: np.ndarray  # (M, r, r, d)

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim != 4 or Z.shape[1] != Z.shape[2]:
            raise DataError(f"covariates must have shape (M, r, r, d), got {Z.shape}")
        object.__setattr__(self, "Z", Z)

    @property
    def M(self) -> int:
        return self.Z.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[3]


def transition_rates(struct: TransitionStructure, baseline_rate: float, beta, Z_m) -> np.ndarray:
    """``r x r`` matrix of intensities ``lambda0 * exp(beta' Z_ij)`` (zero where not allowed)."""
    beta = np.asarray(beta, dtype=float)
    rates = np.zeros((struct.r, struct.r))
    for i, j in struct.allowed:
        rates[i, j] = baseline_rate * math.exp(float(np.dot(beta, Z_m[i, j])))
    return rates


def simulate_individual(
    struct: TransitionStructure,
    baseline_rate: float,
    beta,
    Z_m: np.ndarray,
    horizon: float,
    rng: np.random.Generator,
    start: int = 0,
) -> RenewalPath:
    """Simulate one path with cumulative baseline hazards ``lambda0 * x``.

    Jumps continue until an absorbing state is entered or the next entry time
    would pass ``horizon``; the path then ends at its last completed jump.
    """
    if not horizon > 0:
        raise StructureError("horizon must be positive")
    rates = transition_rates(struct, baseline_rate, beta, Z_m)
    absorbing = set(struct.absorbing)
    states, times = [start], [0.0]
    now, state = 0.0, start
    while state not in absorbing:
        total = rates[state].sum()
        if not total > 0:
            raise StructureError(f"state {state} is not absorbing but has zero total rate")
        now += rng.exponential(1.0 / total)
        if now > horizon:
            return RenewalPath(tuple(states), tuple(times), HORIZON, horizon)
        state = int(rng.choice(struct.r, p=rates[state] / total))
        states.append(state)
        times.append(now)
    return RenewalPath(tuple(states), tuple(times), ABSORPTION, horizon)


def simulate_cohort(
    struct: TransitionStructure,
    n_individuals: int,
    beta,
    baseline_rate: float = 0.5,
    horizon: float = 10.0,
    seed: int = 0,
    start: int = 0,
) -> tuple[list[RenewalPath], CovariateSet]:
    """Independent individuals, each with its own stream seeded from ``(seed, m)``.

    Covariates for every (individual, i, j) are uniform on ``[-1, 1]^d``.
    """
    beta = np.asarray(beta, dtype=float)
    d = beta.size
    Z = np.zeros((n_individuals, struct.r, struct.r, d))
    paths = []
    for m in range(n_individuals):
        rng = np.random.default_rng(np.random.SeedSequence([seed, m]))
        for i, j in struct.allowed:
            Z[m, i, j] = rng.uniform(-1.0, 1.0, d)
        paths.append(simulate_individual(struct, baseline_rate, beta, Z[m], horizon, rng, start))
    return paths, CovariateSet(Z)


@dataclass
class _Channel:
    z: np.ndarray  # covariates of every at-risk visit, sorted by sojourn descending (S, d)
    risk_end: np.ndarray  # for each event, index of the last visit with sojourn >= event sojourn
    z_event: np.ndarray  # (E, d)


@dataclass
class RiskSets:
    """Sorted risk sets per transition channel, built once from the paths."""

    channels: dict = field(default_factory=dict)
    d: int = 0
    n_events: int = 0

    @classmethod
    def build(
        cls, paths: Sequence[RenewalPath], covariates: CovariateSet, include_open: bool = False
    ) -> "RiskSets":
        """Sort every channel's risk set.

        With ``include_open`` the unfinished last sojourn of a path cut at its
        horizon stays in the risk sets up to its elapsed length (it never
        counts as an event).
        """
        Z = covariates.Z
        if len(paths) != covariates.M:
            raise DataError(f"{len(paths)} paths but covariates for {covariates.M} individuals")
        visits: dict[int, list[tuple[float, int, int]]] = {}
        for m, path in enumerate(paths):
            for i, j, w, _ in path.jumps():
                visits.setdefault(i, []).append((w, m, j))
            w_open = path.open_sojourn if include_open else None
            if w_open is not None and w_open > 0:
                visits.setdefault(path.states[-1], []).append((w_open, m, -1))
        out = cls(d=covariates.d)
        for i, vs in visits.items():
            w = np.array([v[0] for v in vs])
            ms = np.array([v[1] for v in vs])
            dest = np.array([v[2] for v in vs])
            order = np.argsort(-w, kind="stable")
            w, ms, dest = w[order], ms[order], dest[order]
            for j in np.unique(dest[dest >= 0]):
                zc = Z[ms, i, j]
                if not np.all(np.isfinite(zc)):
                    raise DataError(f"missing covariates for channel {(i, int(j))}")
                ev = np.flatnonzero(dest == j)
                # last position whose sojourn is >= the event sojourn (ties inclusive)
                risk_end = np.searchsorted(-w, -w[ev], side="right") - 1
                out.channels[(i, int(j))] = _Channel(zc, risk_end, zc[ev])
                out.n_events += ev.size
        return out

    def _terms(self, B: np.ndarray):
        """Yield ``(channel, eta, shift, S0, S1)`` per channel for beta rows ``B``.

        S0 and S1 are scaled by ``exp(-shift)``. When eta spans more than the
        float exponent range the sums are accumulated in log space so that no
        risk set underflows to zero.
        """
        for ch in self.channels.values():
            eta = ch.z @ B.T  # (S, k)
            run_max = np.maximum.accumulate(eta, axis=0)
            if np.all(run_max[-1] - run_max[0] < 700.0):
                shift = run_max[-1]
                w = np.exp(eta - shift)
                s0 = np.cumsum(w, axis=0)[ch.risk_end]  # (E, k)
                s1 = np.cumsum(w[:, :, None] * ch.z[:, None, :], axis=0)[ch.risk_end]  # (E, k, d)
                yield ch, eta, shift, s0, s1
                continue
            # wide spread in eta: accumulate in log space, splitting z by sign
            log_s0 = np.logaddexp.accumulate(eta, axis=0)[ch.risk_end]
            with np.errstate(divide="ignore"):
                lzp = np.log(np.maximum(ch.z, 0.0))[:, None, :]
                lzn = np.log(np.maximum(-ch.z, 0.0))[:, None, :]
            lp = np.logaddexp.accumulate(eta[:, :, None] + lzp, axis=0)[ch.risk_end]
            ln = np.logaddexp.accumulate(eta[:, :, None] + lzn, axis=0)[ch.risk_end]
            shift = log_s0  # per event
            s1 = np.exp(lp - log_s0[:, :, None]) - np.exp(ln - log_s0[:, :, None])
            yield ch, eta, shift, np.ones_like(log_s0), s1

    def score(self, B: np.ndarray) -> np.ndarray:
        B = np.atleast_2d(np.asarray(B, dtype=float))
        U = np.zeros((B.shape[0], self.d))
        for ch, _, _, s0, s1 in self._terms(B):
            U += ch.z_event.sum(axis=0)[None, :] - (s1 / s0[:, :, None]).sum(axis=0)
        return U

    def partial_nll(self, B: np.ndarray) -> np.ndarray:
        B = np.atleast_2d(np.asarray(B, dtype=float))
        nll = np.zeros(B.shape[0])
        for ch, _, shift, s0, _ in self._terms(B):
            eta_ev = ch.z_event @ B.T  # (E, k)
            nll -= (eta_ev - np.log(s0) - shift).sum(axis=0)
        return nll


def score_U(beta, paths: Sequence[RenewalPath], covariates: CovariateSet, include_open: bool = False) -> np.ndarray:
    return RiskSets.build(paths, covariates, include_open).score(beta)[0]


def mnorm_objective(beta, paths, covariates, p: float = 2.0, include_open: bool = False) -> float:
    """``||U(beta)||_p``; ``p = inf`` gives the max-abs norm."""
    return float(lp_norm(score_U(beta, paths, covariates, include_open), p))


def cox_partial_nll(beta, paths, covariates, include_open: bool = False) -> float:
    return float(RiskSets.build(paths, covariates, include_open).partial_nll(beta)[0])


def lp_norm(U: np.ndarray, p: float) -> np.ndarray:
    if p < 1:
        raise ConfigurationError(f"p must be >= 1, got {p}")
    U = np.asarray(U, dtype=float)
    if math.isinf(p):
        return np.max(np.abs(U), axis=-1)
    return np.sum(np.abs(U) ** p, axis=-1) ** (1.0 / p)


def renewal_objective(paths, covariates, kind: str = "mnorm", p: float = 2.0, include_open: bool = False) -> Objective:
    """Batched objective over beta rows: ``mnorm`` (``||U||_p``) or ``nll``."""
    risk = RiskSets.build(paths, covariates, include_open)
    if kind == "mnorm":
        return Objective(lambda B: lp_norm(risk.score(B), p), name=f"score_norm_p{p}", vectorized=True)
    if kind == "nll":
        return Objective(risk.partial_nll, name="cox_partial_nll", vectorized=True)
    raise ConfigurationError(f"unknown renewal objective {kind!r}")


def renewal_space(d: int, bound: float = BETA_BOUND) -> SearchSpace:
    return SearchSpace(np.full(d, -bound), np.full(d, bound), names=tuple(f"beta_{i + 1}" for i in range(d)))


DEFAULT_FIT_CONFIG = OptConfig(swarm_size=20, max_evals=3000, tolerance=0.0)


def estimate_beta(paths, covariates: CovariateSet, p: float = 2.0, opt_config: OptConfig | None = None,
                  include_open: bool = True) -> OptResult:
    """Minimise ``||U(beta)||_p`` over ``[-BETA_BOUND, BETA_BOUND]^d``.

    Censored final sojourns enter the risk sets by default, which removes the
    downward bias that horizon truncation otherwise induces.
    """
    obj = renewal_objective(paths, covariates, "mnorm", p, include_open)
    return minimize(obj, renewal_space(covariates.d), opt_config or DEFAULT_FIT_CONFIG)


def export_paths(paths: Sequence[RenewalPath], path) -> None:
    """Write jumps as ``m,n,from_state,to_state,time`` rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "n", "from_state", "to_state", "time"])
        for m, p in enumerate(paths):
            for n, (i, j, _, t) in enumerate(p.jumps(), start=1):
                w.writerow([m, n, i, j, repr(float(t))])


def import_paths(path, n_individuals: int, struct: TransitionStructure | None = None, start: int = 0,
                 horizon: float = math.inf):
    """Inverse of :func:`export_paths`; individuals without rows keep only their start state.

    The observation horizon is not stored in the file, so pass it to recover
    open final sojourns.
    """
    rows: dict[int, list[tuple[int, int, int, float]]] = {}
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            m = int(r["m"])
            rows.setdefault(m, []).append((int(r["n"]), int(r["from_state"]), int(r["to_state"]), float(r["time"])))
    absorbing = set(struct.absorbing) if struct else set()
    out = []
    for m in range(n_individuals):
        jumps = sorted(rows.get(m, []))
        states = [jumps[0][1] if jumps else start] + [j[2] for j in jumps]
        times = [0.0] + [j[3] for j in jumps]
        end = ABSORPTION if states[-1] in absorbing else HORIZON
        out.append(RenewalPath(tuple(states), tuple(times), end, horizon))
    return out


def export_covariates(cov: CovariateSet, struct: TransitionStructure, path) -> None:
    """Write ``m,from_state,to_state,z1..zd`` rows for every allowed transition."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "from_state", "to_state"] + [f"z{k + 1}" for k in range(cov.d)])
        for m in range(cov.M):
            for i, j in struct.allowed:
                w.writerow([m, i, j] + [repr(float(v)) for v in cov.Z[m, i, j]])


def import_covariates(path, r: int) -> CovariateSet:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        zcols = [c for c in (reader.fieldnames or []) if c.startswith("z")]
        if not zcols:
            raise DataError(f"{path}: no z1..zd columns")
        rows = [(int(q["m"]), int(q["from_state"]), int(q["to_state"]), [float(q[c]) for c in zcols]) for q in reader]
    if not rows:
        raise DataError(f"{path}: no covariate rows")
    Z = np.zeros((max(q[0] for q in rows) + 1, r, r, len(zcols)))
    for m, i, j, z in rows:
        if not (0 <= i < r and 0 <= j < r):
            raise DataError(f"{path}: transition {i}->{j} outside {r} states")
        Z[m, i, j] = z
    return CovariateSet(Z)
