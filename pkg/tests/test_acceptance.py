"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL`` line listing its clauses
and fails if any clause fails.  Tolerances and budgets are fixed; nothing here
is tuned to make a clause pass.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from swarmstat.benchmarks import DynamicEnv, ackley, dynamic_sphere, quartic, sphere, weierstrass
from swarmstat.design import (
    ApproximateDesign,
    car_refuel_spec,
    d_criterion,
    d_efficiency_lower_bound,
    design_objective,
    design_search,
    design_space,
    logistic_line_spec,
    sensitivity,
)
from swarmstat.harness import Experiment, run_experiment, wilcoxon_rank_sum
from swarmstat.impute import (
    COMPARTMENT_SIGMA,
    compartment_table_path,
    e_step,
    em_fit,
    load_bivariate,
    q_objective,
    simulate_bivariate,
)
from swarmstat.objective import Objective
from swarmstat.rasch import RaschParams, rasch_marginal_nll, rasch_objective, rasch_space, simulate_rasch
from swarmstat.renewal import (
    cox_partial_nll,
    estimate_beta,
    preset,
    renewal_objective,
    renewal_space,
    score_U,
    simulate_cohort,
)
from swarmstat.scad import (
    DEFAULT_PATH_CONFIG,
    ScadConfig,
    scad_batch_objective,
    scad_penalty,
    scad_space,
    solution_path,
    synthetic_lake,
)
from swarmstat.scgtm import ScgtmParams, scgtm_nll, scgtm_objective, scgtm_space, simulate_gene
from swarmstat.space import SearchSpace
from swarmstat.swarm import OptConfig, cso_iteration, evals_per_iteration, init_swarm, minimize


@pytest.fixture
def report(capsys):
    def emit(number, clauses, elapsed):
        ok = all(passed for _, passed in clauses)
        detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]" for text, passed in clauses)
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} ({elapsed:.1f} s): {detail}")
        assert ok, detail
    return emit


# --- 1. benchmark ordering -------------------------------------------------------

def test_criterion_01_benchmark_ordering(report):
    start = time.perf_counter()
    exp = Experiment("ackley", 100, ("cso_ma", "pso"), runs=15,
                     config=OptConfig(swarm_size=50, max_evals=20_000, tolerance=0.0, seed=0))
    rep = run_experiment(exp)
    med_cso, med_pso = rep.summaries["cso_ma"].median, rep.summaries["pso"].median
    p = rep.p_values["pso"]
    report(1, [
        (f"median CSO-MA {med_cso:.4g} < median PSO {med_pso:.4g}", med_cso < med_pso),
        (f"rank-sum p = {p:.3g} < 0.05", p < 0.05),
        (f"median CSO-MA {med_cso:.4g} < 1e-2", med_cso < 1e-2),
    ], time.perf_counter() - start)


# --- 2. known optima ------------------------------------------------------------------

def test_criterion_02_known_optima(report):
    start = time.perf_counter()
    vals = {
        "weierstrass(0)": (weierstrass(np.zeros(10)), 0.0),
        "quartic(1)": (quartic(np.ones(30)), 0.0),
        "ackley(0)": (ackley(np.zeros(100)), 0.0),
        "ackley(1,1)": (ackley(np.ones(2)), 20 * (1 - math.exp(-0.2))),
    }
    report(2, [(f"{k} = {v:.3g}", abs(v - t) < 1e-10) for k, (v, t) in vals.items()], time.perf_counter() - start)


# --- 3. scGTM synthetic recovery -------------------------------------------------------

def _synthetic_genes(n_genes=20, cells=500):
    rng = np.random.default_rng(2024)
    genes = []
    for _ in range(n_genes):
        truth = ScgtmParams(mu_mag=rng.uniform(1.5, 3.5), k1=rng.uniform(2, 30), k2=rng.uniform(2, 30),
                            t0=rng.uniform(0.3, 0.7), phi=int(rng.integers(2, 21)),
                            alpha=rng.uniform(-1.5, -0.3), beta=rng.uniform(-1.0, 0.5))
        t = rng.random(cells)
        genes.append((truth, simulate_gene(truth, t, rng)))
    return genes


def test_criterion_03_scgtm_recovery(report):
    start = time.perf_counter()
    wins, truth_ok = 0, 0
    for g, (truth, data) in enumerate(_synthetic_genes()):
        obj, space = scgtm_objective(data), scgtm_space(data)
        cso = minimize(obj, space, OptConfig(swarm_size=20, max_evals=1000, tolerance=0.0, seed=g))
        pso = minimize(obj, space, OptConfig(swarm_size=20, max_evals=1000, tolerance=0.0, seed=g, algorithm="pso"))
        wins += cso.best_value <= pso.best_value
        truth_ok += cso.best_value <= scgtm_nll(truth, data) + 1e-3
    report(3, [
        (f"CSO-MA <= PSO on {wins}/20 genes (need >= 15)", wins >= 15),
        (f"fitted <= truth + 1e-3 on {truth_ok}/20 genes (need 20)", truth_ok == 20),
    ], time.perf_counter() - start)


# --- 4. Rasch quadrature -----------------------------------------------------------------

def _rasch_oracle(Y, beta, sigma2):
    total = 0.0
    sd = math.sqrt(sigma2)
    for row in Y:
        def integrand(theta):
            p = 1.0 / (1.0 + np.exp(-(theta - beta)))
            return np.prod(np.where(row == 1, p, 1 - p)) * math.exp(-0.5 * theta**2 / sigma2) / (sd * math.sqrt(2 * math.pi))
        val, _ = quad(integrand, -12 * sd, 12 * sd, epsabs=1e-14, epsrel=1e-12, limit=200)
        total -= math.log(val)
    return total


def test_criterion_04_rasch_quadrature(report):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_rel, worst_gap = 0.0, 0.0
    for _ in range(25):
        n, items = int(rng.integers(1, 51)), int(rng.integers(1, 11))
        beta, sigma2 = rng.uniform(-3, 3, items), float(rng.uniform(0.05, 4.0))
        data = simulate_rasch(beta, sigma2, n, rng)
        p = RaschParams(beta, sigma2)
        n40, n20 = rasch_marginal_nll(p, data, 40), rasch_marginal_nll(p, data, 20)
        oracle = _rasch_oracle(data.responses, beta, sigma2)
        worst_rel = max(worst_rel, abs(n40 - oracle) / abs(oracle))
        worst_gap = max(worst_gap, abs(n20 - n40))
    report(4, [
        (f"40-node vs oracle max relative error {worst_rel:.2e} < 1e-6", worst_rel < 1e-6),
        (f"max |NLL20 - NLL40| {worst_gap:.2e} < 1e-6", worst_gap < 1e-6),
    ], time.perf_counter() - start)


# --- 5. renewal score consistency ----------------------------------------------------------

def _score_oracle(beta, paths, Z):
    visits = [(m, i, w) for m, p in enumerate(paths) for i, _, w, _ in p.jumps()]
    U = np.zeros(len(beta))
    for m, p in enumerate(paths):
        for i, j, w, _ in p.jumps():
            num, den = np.zeros(len(beta)), 0.0
            for m2, i2, w2 in visits:
                if i2 == i and w2 >= w:
                    e = math.exp(float(Z[m2, i, j] @ beta))
                    num += e * Z[m2, i, j]
                    den += e
            U += Z[m, i, j] - num / den
    return U


def test_criterion_05_score_consistency(report):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_fd = 0.0
    for _ in range(10):
        M, d = int(rng.integers(5, 21)), int(rng.integers(1, 4))
        paths, cov = simulate_cohort(preset("complete3"), M, rng.uniform(-1, 1, d), 0.5, 4.0, int(rng.integers(1e9)))
        beta = rng.normal(scale=0.5, size=d)
        U = score_U(beta, paths, cov)
        h = 1e-6
        grad = np.array([(cox_partial_nll(beta + h * e, paths, cov) - cox_partial_nll(beta - h * e, paths, cov)) / (2 * h)
                         for e in np.eye(d)])
        worst_fd = max(worst_fd, float(np.max(np.abs(grad + U) / np.maximum(np.abs(U), 1.0))))
    worst_oracle, checked = 0.0, 0
    for _ in range(30):
        M, d = int(rng.integers(2, 16)), int(rng.integers(1, 4))
        paths, cov = simulate_cohort(preset("bmt5"), M, rng.uniform(-1, 1, d), 0.5, 6.0, int(rng.integers(1e9)))
        if sum(p.n_jumps for p in paths) > 50:
            continue
        beta = rng.normal(size=d)
        worst_oracle = max(worst_oracle, float(np.max(np.abs(score_U(beta, paths, cov) - _score_oracle(beta, paths, cov.Z)))))
        checked += 1
    report(5, [
        (f"finite-difference gradient vs -U max relative error {worst_fd:.2e} < 1e-5", worst_fd < 1e-5),
        (f"score vs brute force on {checked} datasets max error {worst_oracle:.2e} < 1e-12",
         worst_oracle < 1e-12 and checked >= 10),
    ], time.perf_counter() - start)


# --- 6. renewal simulation ---------------------------------------------------------------------

def test_criterion_06_renewal_simulation(report):
    start = time.perf_counter()
    truth = np.array([0.901, 0.759, 0.348])
    est = []
    for seed in range(20):
        paths, cov = simulate_cohort(preset("complete3"), 100, truth, 0.5, 10.0, seed)
        res = estimate_beta(paths, cov, opt_config=OptConfig(swarm_size=20, max_evals=3000, tolerance=0.0, seed=seed))
        est.append(res.best_position)
    mean = np.mean(est, axis=0)
    err = np.abs(mean - truth)
    report(6, [(f"mean estimate {np.round(mean, 3).tolist()} within 0.05 of truth (max error {err.max():.3f})",
                bool(np.all(err < 0.05)))], time.perf_counter() - start)


# --- 7. imputation on the shipped table ---------------------------------------------------------

def test_criterion_07_table_imputation(report):
    start = time.perf_counter()
    data = load_bivariate(compartment_table_path(), COMPARTMENT_SIGMA)
    res = em_fit(data, [0.5, 0.5, 0.5], em_iters=10)
    imputed = res.y_imputed[data.missing]
    target = np.array([0.75, 0.65, 0.21, 0.28, 0.39])
    err = np.abs(imputed - target)
    steps = np.diff(res.loglik_trace)
    report(7, [
        (f"imputed {np.round(imputed, 3).tolist()} within 0.03 of {target.tolist()} (max error {err.max():.3f})",
         bool(np.all(err <= 0.03))),
        (f"observed log-likelihood non-decreasing (min step {steps.min():.2e})", bool(np.all(steps >= -1e-6))),
    ], time.perf_counter() - start)


# --- 8. imputation simulation ----------------------------------------------------------------------

def test_criterion_08_impute_simulation(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    Sigma = 0.0025 * np.array([[1.0, -0.5], [-0.5, 1.0]])
    data = simulate_bivariate([0.4, 0.05, 0.3], np.geomspace(0.25, 72, 80), Sigma, 40, rng)
    res = em_fit(data, [0.1, 0.1, 0.1], em_iters=10)
    target = np.array([0.392, 0.056, 0.275])
    err = np.abs(res.theta - target)
    report(8, [(f"theta {np.round(res.theta, 4).tolist()} within 0.05 of {target.tolist()} (max error {err.max():.3f})",
                bool(np.all(err <= 0.05)))], time.perf_counter() - start)


# --- 9. SCAD -----------------------------------------------------------------------------------------

def test_criterion_09_scad(report):
    start = time.perf_counter()
    jumps = [abs(scad_penalty(k - 1e-13) - scad_penalty(k + 1e-13)) for k in (1.0, 2.5)]
    path = solution_path(synthetic_lake(), ScadConfig(), DEFAULT_PATH_CONFIG, runs=50)
    rel_sd = np.array([pt.min_sd / abs(pt.min_mean) for pt in path.points])
    shrink = float(np.max(np.abs(path.points[-1].beta_mean)))
    report(9, [
        (f"continuity gaps {max(jumps):.1e} <= 1e-12", max(jumps) <= 1e-12),
        ("P(2) = 5/3", abs(scad_penalty(2.0) - 5 / 3) < 1e-12),
        ("plateau = 1.75", abs(scad_penalty(10.0) - 1.75) < 1e-12),
        (f"50-run SD of the minimum < 1% of its mean at every rho (worst {rel_sd.max():.2%})", bool(np.all(rel_sd < 0.01))),
        (f"max |mean beta| at rho = 100 is {shrink:.3g} < 0.05", shrink < 0.05),
    ], time.perf_counter() - start)


# --- 10. two-parameter logistic design ----------------------------------------------------------------

def test_criterion_10_logistic_design(report):
    start = time.perf_counter()
    spec = logistic_line_spec()
    res = design_search(spec, 4, OptConfig(swarm_size=40, max_evals=40 + 3000 * 21, tolerance=0.0, seed=0))
    pts = np.sort(res.design.points[:, 0])
    g = np.linspace(-3, 3, 201)
    grid_best = max(d_criterion(ApproximateDesign([[a], [b]], [0.5, 0.5]), spec) for a in g for b in g if a < b)
    bound = d_efficiency_lower_bound(res.design, spec)
    report(10, [
        (f"two support points, got {res.design.k}", res.design.k == 2),
        (f"support {np.round(pts, 4).tolist()} within 1e-2 of +-1.5434",
         res.design.k == 2 and bool(np.all(np.abs(pts - [-1.5434, 1.5434]) < 1e-2))),
        (f"weights {np.round(res.design.weights, 4).tolist()} equal within 1e-2",
         bool(np.all(np.abs(res.design.weights - 0.5) < 1e-2))),
        (f"log det {res.log_det:.6f} >= grid oracle {grid_best:.6f}", res.log_det >= grid_best - 1e-9),
        (f"efficiency lower bound {bound.atwood:.5f} >= 0.999", bound.atwood >= 0.999),
    ], time.perf_counter() - start)


# --- 11. car refueling design -----------------------------------------------------------------------

def test_criterion_11_car_refuel_design(report):
    start = time.perf_counter()
    spec = car_refuel_spec()
    res = design_search(spec, 20)
    bound = d_efficiency_lower_bound(res.design, spec)
    identity = float(res.design.weights @ sensitivity(res.design.points, res.design, spec))
    report(11, [
        (f"efficiency lower bound {bound.atwood:.3f} >= 0.95", bound.atwood >= 0.95),
        (f"sum w d = {identity:.12f} equals 16 within 1e-8", abs(identity - 16) < 1e-8),
        (f"{res.design.k} support points in [15, 20]", 15 <= res.design.k <= 20),
    ], time.perf_counter() - start)


# --- 12. rank-sum test --------------------------------------------------------------------------------

def _permutation_p(a, b):
    pooled = np.concatenate([a, b])
    ranks = np.argsort(np.argsort(pooled)) + 1
    w = ranks[: len(a)].sum()
    sums = np.array([sum(c) for c in itertools.combinations(ranks, len(a))])
    return min(1.0, 2 * min(np.mean(sums <= w), np.mean(sums >= w)))


def test_criterion_12_rank_sum(report):
    start = time.perf_counter()
    rng = np.random.default_rng(12)
    worst, cases = 0.0, 0
    for n_a in range(1, 10):
        for n_b in range(1, 11 - n_a):
            for _ in range(10):
                a, b = rng.normal(size=n_a), rng.normal(rng.uniform(-2, 2), size=n_b)
                worst = max(worst, abs(wilcoxon_rank_sum(a, b) - _permutation_p(a, b)))
                cases += 1
    identical = all(wilcoxon_rank_sum(x, x) == 1.0 for x in (np.ones(4), np.arange(6.0), rng.normal(size=20)))
    sym = max(abs(wilcoxon_rank_sum(a, b) - wilcoxon_rank_sum(b, a))
              for a, b in ((rng.normal(size=m), rng.normal(size=k)) for m, k in rng.integers(1, 25, (50, 2))))
    report(12, [
        (f"exact vs enumeration on {cases} tie-free samples, max difference {worst:.1e}", worst < 1e-12),
        ("identical samples give p = 1", identical),
        (f"swap symmetry, max difference {sym:.1e}", sym < 1e-12),
    ], time.perf_counter() - start)


# --- 13. engine invariants ----------------------------------------------------------------------------

class _Counted:
    """Wraps an objective, counting evaluated rows and tracking the minimum seen."""

    def __init__(self, obj: Objective):
        self.inner = obj
        self.rows = 0
        self.best = math.inf
        if obj.pure:
            fn = lambda X: self._record(obj.evaluate(X))
        else:
            fn = lambda X, idx: self._record(obj.evaluate(X, int(idx[0])))
        self.objective = Objective(fn, name=obj.name, vectorized=True, pure=obj.pure)

    def _record(self, values):
        self.rows += len(values)
        self.best = min(self.best, float(np.min(values)))
        return values


def _objective_pool():
    rng = np.random.default_rng(13)
    pool = []
    for name, fn, lo, hi in (("weierstrass", weierstrass, -0.5, 0.5), ("quartic", quartic, -2, 2),
                             ("ackley", ackley, -32, 32), ("sphere", sphere, -5, 5)):
        pool.append((name, lambda d, fn=fn: Objective(fn, vectorized=True), lambda d, lo=lo, hi=hi: SearchSpace.box(lo, hi, d)))
    env_cache = {}

    def dyn(d):
        env = env_cache.setdefault(d, DynamicEnv(d, change_period=7, seed=d))
        return Objective(lambda X, idx: dynamic_sphere(X, idx, env), vectorized=True, pure=False)
    pool.append(("dynamic_sphere", dyn, lambda d: SearchSpace.box(-5, 5, d)))

    gene = simulate_gene(ScgtmParams(2.0, 10.0, 4.0, 0.5, 5, -0.8, -0.2), rng.random(30), rng)
    pool.append(("scgtm", lambda d: scgtm_objective(gene), lambda d: scgtm_space(gene)))
    answers = simulate_rasch(rng.uniform(-1, 1, 3), 1.0, 20, rng)
    pool.append(("rasch", lambda d: rasch_objective(answers, 10), lambda d: rasch_space(answers)))
    paths, cov = simulate_cohort(preset("complete3"), 10, np.array([0.5, -0.5]), 0.5, 5.0, 1)
    pool.append(("renewal", lambda d: renewal_objective(paths, cov, "mnorm", include_open=True), lambda d: renewal_space(2)))
    bdata = simulate_bivariate([0.4, 0.05, 0.3], np.geomspace(0.3, 72, 10), COMPARTMENT_SIGMA, 4, rng)
    filled, _ = e_step(bdata, [0.4, 0.05, 0.3])
    pool.append(("impute_q", lambda d: q_objective(filled, bdata), lambda d: SearchSpace.box(0.0, 1.0, 3)))
    lake = synthetic_lake()
    pool.append(("scad", lambda d: scad_batch_objective(lake, 0.5), lambda d: scad_space(lake.p)))
    line = logistic_line_spec()
    pool.append(("design", lambda d: design_objective(line, 2), lambda d: design_space(line, 2)))
    return pool


def _checked_run(make_obj, space, cfg, iterations, failures, label):
    """Step the engine by hand, checking every invariant after every iteration."""
    counted = _Counted(make_obj())
    obj = counted.objective
    rng = np.random.default_rng(cfg.seed)
    swarm = init_swarm(obj, space, cfg.swarm_size, rng)
    per_iter = evals_per_iteration(cfg, obj)
    done = 0
    for _ in range(iterations):
        before = swarm.copy()
        cso_iteration(swarm, obj, space, cfg, rng)
        done += 1
        w = swarm.last_winners
        if swarm.best_value > before.best_value:
            failures.append(f"{label}: incumbent increased")
        if not (np.array_equal(swarm.positions[w], before.positions[w])
                and np.array_equal(swarm.velocities[w], before.velocities[w])):
            failures.append(f"{label}: a winner moved")
        if obj.pure and not np.array_equal(swarm.fitness[w], before.fitness[w]):
            failures.append(f"{label}: a winner's fitness changed")
        if not (np.all(swarm.positions >= space.lower) and np.all(swarm.positions <= space.upper)):
            failures.append(f"{label}: position left the box")
        if swarm.eval_count - before.eval_count != per_iter or swarm.eval_count != counted.rows:
            failures.append(f"{label}: evaluation count mismatch")
        if obj.pure and swarm.best_value != counted.best:
            failures.append(f"{label}: incumbent is not the best value evaluated")
        if failures:
            break
    return done


def test_criterion_13_engine_invariants(report):
    start = time.perf_counter()
    pool = _objective_pool()
    rng = np.random.default_rng(1313)
    failures, iterations, runs = [], 0, 0
    target = 1_000_000
    while iterations < target and not failures:
        name, make_obj, make_space = pool[int(rng.integers(len(pool)))]
        dim = int(rng.integers(1, 5))
        space = make_space(dim)
        algo = ["cso_ma", "cso", "pso"][int(rng.integers(3))]
        n = int(rng.choice([4, 6, 8]))
        seed = int(rng.integers(2**31))
        phi = float(rng.uniform(0, 1))
        label = f"{name}/{algo}/n={n}/seed={seed}"
        steps = 400 if name in ("ackley", "sphere", "quartic", "weierstrass", "dynamic_sphere") else 60
        if algo != "pso":
            cfg = OptConfig(swarm_size=n, phi=phi, seed=seed, algorithm=algo, tolerance=0.0)
            iterations += _checked_run(lambda: make_obj(dim), space, cfg, steps, failures, label)
        # full runs: determinism, accounting and monotone trace for every algorithm
        counted = [_Counted(make_obj(dim)) for _ in range(2)]
        budget = n + steps * (n if algo == "pso" else n // 2 + 1 + (0 if counted[0].objective.pure else n // 2))
        cfg = OptConfig(swarm_size=n, phi=phi, seed=seed, algorithm=algo, tolerance=0.0, max_evals=budget)
        a = minimize(counted[0].objective, space, cfg)
        b = minimize(counted[1].objective, space, cfg)
        iterations += a.iterations + b.iterations
        runs += 1
        if not (np.array_equal(a.best_position, b.best_position) and a.best_value == b.best_value
                and np.array_equal(a.trace, b.trace)):
            failures.append(f"{label}: same seed gave different results")
        if a.evals_used != counted[0].rows or a.evals_used > budget:
            failures.append(f"{label}: evals_used {a.evals_used} vs {counted[0].rows} counted")
        if np.any(np.diff(a.trace[:, 1]) > 0):
            failures.append(f"{label}: trace not monotone")
        if not space.contains(a.best_position):
            failures.append(f"{label}: incumbent outside the box")
    report(13, [
        (f"{iterations} engine iterations over {runs} seeded configurations (need >= {target})", iterations >= target),
        (f"invariant violations: {failures[:3] or 'none'}", not failures),
    ], time.perf_counter() - start)
