"""Seeded multi-run experiments, summaries and the rank-sum comparison."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from . import __version__
from .benchmarks import get_benchmark
from .errors import ConfigurationError, DomainError
from .swarm import ALGORITHMS, OptConfig, minimize

CSV_HEADER = ("algorithm", "run", "seed", "best_value", "evals", "elapsed_s")
SEED_STRIDE = 1_000_000
SCHEMA_PATH = Path(__file__).parent / "data" / "report.schema.json"


# --- rank-sum test -------------------------------------------------------------

@lru_cache(maxsize=256)
def _rank_sum_counts(n_a: int, N: int) -> np.ndarray:
    """Number of size-``n_a`` subsets of ``1..N`` with each possible rank sum."""
    max_sum = sum(range(N - n_a + 1, N + 1))
    # counts[j, s]: subsets of size j drawn from the ranks seen so far summing to s
    counts = np.zeros((n_a + 1, max_sum + 1), dtype=object)
    counts[0, 0] = 1
    for r in range(1, N + 1):
        for j in range(min(r, n_a), 0, -1):
            counts[j, r:] = counts[j, r:] + counts[j - 1, : max_sum + 1 - r]
    return counts[n_a]


def wilcoxon_rank_sum(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sided rank-sum p-value.

    Exact when the pooled size is at most 12 and there are no ties; otherwise
    a normal approximation with tie and continuity corrections.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    if not np.all(np.isfinite(pooled)):
        raise DomainError("samples must be finite")
    n_a, n_b, N = a.size, b.size, pooled.size
    ranks = rankdata(pooled)
    w = ranks[:n_a].sum()
    tied = np.unique(pooled).size < N
    if N <= 12 and not tied:
        counts = _rank_sum_counts(n_a, N)
        total = sum(counts)
        w = int(round(w))
        lower = sum(counts[: w + 1]) / total
        upper = sum(counts[w:]) / total
        return float(min(1.0, 2.0 * min(lower, upper)))
    mean = n_a * (N + 1) / 2.0
    _, t = np.unique(pooled, return_counts=True)
    var = n_a * n_b / 12.0 * ((N + 1) - np.sum(t**3 - t) / (N * (N - 1)))
    if var <= 0:
        return 1.0
    z = (abs(w - mean) - 0.5) / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))


# --- experiments ---------------------------------------------------------------

@dataclass
class Experiment:
    objective_id: str
    dim: int
    algorithms: tuple = ALGORITHMS
    runs: int = 30
    config: OptConfig = field(default_factory=OptConfig)
    out: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        if self.runs < 1:
            raise ConfigurationError("runs must be at least 1")
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            raise ConfigurationError(f"algorithms must be a non-empty subset of {ALGORITHMS}")
        if self.fmt not in ("csv", "json"):
            raise ConfigurationError(f"unknown format {self.fmt!r}")

    def seed(self, algorithm: str, run: int) -> int:
        return self.config.seed + ALGORITHMS.index(algorithm) * SEED_STRIDE + run


@dataclass(frozen=True)
class RunRecord:
    algorithm: str
    run: int
    seed: int
    best_value: float
    evals: int
    elapsed_s: float


@dataclass
class AlgorithmSummary:
    mean: float
    sd: float
    median: float
    elapsed_mean: float
    elapsed_sd: float


@dataclass
class ComparisonReport:
    objective_id: str
    dim: int
    base_seed: int
    rows: list
    summaries: dict
    p_values: dict
    version: str = __version__

    @classmethod
    def from_rows(cls, objective_id: str, dim: int, base_seed: int, rows: Sequence[RunRecord]) -> "ComparisonReport":
        algos = [a for a in ALGORITHMS if any(r.algorithm == a for r in rows)]
        values = {a: np.array([r.best_value for r in rows if r.algorithm == a]) for a in algos}
        times = {a: np.array([r.elapsed_s for r in rows if r.algorithm == a]) for a in algos}
        summaries = {a: AlgorithmSummary(float(values[a].mean()), _sd(values[a]), float(np.median(values[a])),
                                         float(times[a].mean()), _sd(times[a])) for a in algos}
        p_values = {}
        if "cso_ma" in values:
            for a in algos:
                if a == "cso_ma":
                    continue
                if min(values["cso_ma"].size, values[a].size) < 2:
                    p_values[a] = None
                else:
                    p_values[a] = wilcoxon_rank_sum(values["cso_ma"], values[a])
        return cls(objective_id, dim, base_seed, list(rows), summaries, p_values)

    def to_dict(self) -> dict:
        return {
            "tool": "swarmstat",
            "version": self.version,
            "objective_id": self.objective_id,
            "dim": self.dim,
            "base_seed": self.base_seed,
            "summaries": {a: vars(s) for a, s in self.summaries.items()},
            "p_values": self.p_values,
            "runs": [vars(r) for r in self.rows],
        }


def _sd(x: np.ndarray) -> float:
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def _single_run(objective_id: str, dim: int, config: OptConfig) -> tuple[float, int, float]:
    spec = get_benchmark(objective_id, dim)
    start = time.perf_counter()
    res = minimize(spec.objective(), spec.space, config)
    return res.best_value, res.evals_used, time.perf_counter() - start


def max_workers() -> int:
    raw = os.environ.get("SWARMSTAT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"SWARMSTAT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def run_experiment(exp: Experiment) -> ComparisonReport:
    """Run every (algorithm, run) pair, aggregate, and persist if ``exp.out`` is set."""
    get_benchmark(exp.objective_id, exp.dim)  # raises on an unknown name
    jobs = [(a, r, exp.config.with_(algorithm=a, seed=exp.seed(a, r))) for a in exp.algorithms for r in range(exp.runs)]
    workers = min(max_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_single_run, exp.objective_id, exp.dim, c) for _, _, c in jobs]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_single_run(exp.objective_id, exp.dim, c) for _, _, c in jobs]
    rows = [RunRecord(a, r, c.seed, float(v), int(n), float(t)) for (a, r, c), (v, n, t) in zip(jobs, outcomes)]
    report = ComparisonReport.from_rows(exp.objective_id, exp.dim, exp.config.seed, rows)
    if exp.out:
        emit(report, exp.out, exp.fmt)
    return report


# --- serialization -------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def emit(report: ComparisonReport, path, fmt: str = "csv") -> Path:
    """Write raw runs as CSV, or the full report as JSON; returns the path."""
    path = Path(path)
    if fmt == "csv":
        lines = [",".join(CSV_HEADER)]
        for r in report.rows:
            lines.append(",".join([r.algorithm, str(r.run), str(r.seed), _g17(r.best_value), str(r.evals), _g17(r.elapsed_s)]))
        _atomic_write(path, "\n".join(lines) + "\n")
    elif fmt == "json":
        # json writes floats with repr, which round-trips exactly
        _atomic_write(path, json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n")
    else:
        raise ConfigurationError(f"unknown format {fmt!r}")
    return path


def read_rows(path) -> list[RunRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ConfigurationError(f"{path}: unexpected header {reader.fieldnames}")
        return [RunRecord(r["algorithm"], int(r["run"]), int(r["seed"]), float(r["best_value"]),
                          int(r["evals"]), float(r["elapsed_s"])) for r in reader]


def read_report(path) -> ComparisonReport:
    doc = json.loads(Path(path).read_text())
    rows = [RunRecord(**r) for r in doc["runs"]]
    summaries = {a: AlgorithmSummary(**s) for a, s in doc["summaries"].items()}
    return ComparisonReport(doc["objective_id"], doc["dim"], doc["base_seed"], rows, summaries,
                            doc["p_values"], doc["version"])
