"""Command-line entry point: ``swarmstat <subcommand> [options]``.

Every long option can also be given in a ``--config`` file of ``key = value``
lines (``#`` starts a comment); keys use the option name with or without
leading dashes, and command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import benchmark_names
from .errors import ConfigurationError, SwarmStatError
from .harness import Experiment, _atomic_write, _g17, run_experiment
from .swarm import ALGORITHMS, OptConfig, minimize


def parse_config_file(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value.strip("\"'")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("optimizer")
    g.add_argument("--algo", choices=ALGORITHMS, default="cso_ma")
    g.add_argument("--swarm-size", type=int, default=None, help="particles (default depends on the task)")
    g.add_argument("--evals", type=int, default=None, help="objective evaluation budget")
    g.add_argument("--runs", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--phi", type=float, default=0.3)
    g.add_argument("--tolerance", type=float, default=None)
    g.add_argument("--out", default=None, help="output file (stdout when omitted)")
    g.add_argument("--format", choices=("csv", "json"), default="json")
    g.add_argument("--config", default=None, help="key = value file supplying defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmstat", description="Swarm optimisation for statistical estimation and design.")
    parser.add_argument("--version", action="version", version=f"swarmstat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("bench", "optimise a benchmark function with one algorithm"),
                        ("compare", "compare algorithms on a benchmark with rank-sum tests")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--function", required=True, help=", ".join(benchmark_names()))
        p.add_argument("--dim", type=int, default=30)
        if name == "compare":
            p.add_argument("--algorithms", default=",".join(ALGORITHMS))

    p = sub.add_parser("scgtm", help="fit the hill-shaped zero-inflated NB trend to one gene")
    _common(p)
    p.add_argument("--data", required=True, help="CSV with columns t,y")
    p.add_argument("--estimate-b", action="store_true")

    p = sub.add_parser("rasch", help="marginal maximum likelihood for a Rasch model")
    _common(p)
    p.add_argument("--data", required=True, help="0/1 response matrix CSV without header")
    p.add_argument("--nodes", type=int, default=21)

    p = sub.add_parser("survival", help="score-equation estimate in a Markov renewal model")
    _common(p)
    p.add_argument("--paths", help="jump CSV (m,n,from_state,to_state,time)")
    p.add_argument("--covariates", help="covariate CSV (m,from_state,to_state,z1..zd)")
    p.add_argument("--individuals", type=int, default=100, help="cohort size when simulating")
    p.add_argument("--structure", default="complete3", help="bmt5, complete3 or twostate")
    p.add_argument("--beta", default="0.901,0.759,0.348", help="true beta when simulating")
    p.add_argument("--baseline-rate", type=float, default=0.5)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--norm", type=float, default=2.0, help="p of the score norm (inf allowed)")

    p = sub.add_parser("impute", help="EM imputation for the two-compartment model")
    _common(p)
    p.add_argument("--data", help="CSV with columns x,y1,y2 (default: the shipped 9-row table)")
    p.add_argument("--sigma", help="s11,s12,s22 (default: complete-row estimate)")
    p.add_argument("--theta-init", default="0.5,0.5,0.5")
    p.add_argument("--em-iters", type=int, default=10)

    p = sub.add_parser("scad", help="SCAD solution path over a penalty grid")
    _common(p)
    p.add_argument("--data", help="CSV with a header row (default: the synthetic lake fixture)")
    p.add_argument("--response", default="CRAP")
    p.add_argument("--rho-grid", help="comma-separated increasing values")

    p = sub.add_parser("design", help="locally D-optimal design search")
    _common(p)
    p.add_argument("--spec", help="TOML model spec (default: the car refueling model)")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--particles", type=int, default=None, help="alias for --swarm-size")
    p.add_argument("--iterations", type=int, default=3000)
    return parser


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in str(text).split(",") if v.strip()])


def _config(args, swarm_size: int, evals: int, tolerance: float = 1e-5) -> OptConfig:
    return OptConfig(
        swarm_size=args.swarm_size or swarm_size,
        phi=args.phi,
        max_evals=args.evals or evals,
        tolerance=tolerance if args.tolerance is None else args.tolerance,
        seed=args.seed,
        algorithm=args.algo,
    ).validate()


def _write(record: dict, args) -> None:
    """Emit a flat record (lists become ';'-joined in CSV)."""
    if args.format == "json":
        text = json.dumps(record, indent=2) + "\n"
    else:
        def cell(v):
            if isinstance(v, (list, tuple)):
                return ";".join(cell(x) for x in v)
            return _g17(v) if isinstance(v, float) else str(v)
        text = ",".join(record) + "\n" + ",".join(cell(v) for v in record.values()) + "\n"
    if args.out:
        _atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)


def _fit_record(res, names) -> dict:
    return {"algorithm": res.algorithm, "seed": res.seed, "best_value": float(res.best_value),
            "evals": int(res.evals_used), "elapsed_s": float(res.elapsed_seconds),
            "names": list(names), "estimate": [float(v) for v in res.best_position]}


def cmd_bench(args) -> None:
    cfg = _config(args, 50, 10_000)
    exp = Experiment(args.function, args.dim, (args.algo,), args.runs or 1, cfg, args.out, args.format)
    report = run_experiment(exp)
    if not args.out:
        _write(report.to_dict() if args.format == "json" else {
            "algorithm": args.algo, "median": report.summaries[args.algo].median,
            "mean": report.summaries[args.algo].mean, "sd": report.summaries[args.algo].sd}, args)


def cmd_compare(args) -> None:
    cfg = _config(args, 50, 10_000)
    algos = tuple(a.strip() for a in args.algorithms.split(",") if a.strip())
    exp = Experiment(args.function, args.dim, algos, args.runs or 30, cfg, args.out, args.format)
    report = run_experiment(exp)
    if not args.out:
        sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")


def cmd_scgtm(args) -> None:
    from .scgtm import load_cells, scgtm_objective, scgtm_space
    data = load_cells(args.data)
    space = scgtm_space(data, args.estimate_b)
    res = minimize(scgtm_objective(data), space, _config(args, 20, 1000))
    _write(_fit_record(res, space.names), args)


def cmd_rasch(args) -> None:
    from .rasch import load_responses, rasch_objective, rasch_space
    data = load_responses(args.data)
    space = rasch_space(data)
    res = minimize(rasch_objective(data, args.nodes), space, _config(args, 50, 20_000))
    _write(_fit_record(res, space.names), args)


def cmd_survival(args) -> None:
    from . import renewal as rn
    struct = rn.preset(args.structure)
    if args.paths or args.covariates:
        if not (args.paths and args.covariates):
            raise ConfigurationError("--paths and --covariates must be given together")
        cov = rn.import_covariates(args.covariates, struct.r)
        paths = rn.import_paths(args.paths, cov.M, struct, horizon=args.horizon)
    else:
        paths, cov = rn.simulate_cohort(struct, args.individuals, _floats(args.beta), args.baseline_rate,
                                        args.horizon, args.seed)
    res = rn.estimate_beta(paths, cov, args.norm, _config(args, 20, 3000, 0.0))
    _write(_fit_record(res, [f"beta_{i + 1}" for i in range(cov.d)]), args)


def cmd_impute(args) -> None:
    from .impute import em_fit, load_bivariate, compartment_table_path
    Sigma = None
    if args.sigma:
        s11, s12, s22 = _floats(args.sigma)
        Sigma = np.array([[s11, s12], [s12, s22]])
    data = load_bivariate(args.data or compartment_table_path(), Sigma)
    res = em_fit(data, _floats(args.theta_init), args.em_iters, _config(args, 20, 2220, 0.0))
    _write({"theta": res.theta.tolist(), "iterations": res.iterations,
            "loglik": [float(v) for v in res.loglik_trace],
            "y1": [float(v) for v in res.y_imputed[:, 0]], "y2": [float(v) for v in res.y_imputed[:, 1]]}, args)


def cmd_scad(args) -> None:
    from .scad import DEFAULT_PATH_CONFIG, ScadConfig, load_regression, solution_path, synthetic_lake
    data = load_regression(args.data, args.response).standardize() if args.data else synthetic_lake(args.seed)
    cfg = ScadConfig(rho_grid=tuple(_floats(args.rho_grid))) if args.rho_grid else ScadConfig()
    d = DEFAULT_PATH_CONFIG
    opt = _config(args, d.swarm_size, d.max_evals, d.tolerance)
    path = solution_path(data, cfg, opt, runs=args.runs or 50)
    if args.format == "csv" and args.out:
        path.write_csv(args.out)
        return
    _write({"rho": [p.rho for p in path.points], "min_mean": [p.min_mean for p in path.points],
            "min_sd": [p.min_sd for p in path.points], "names": list(path.names),
            "beta_mean": [p.beta_mean.tolist() for p in path.points],
            "beta_sd": [p.beta_sd.tolist() for p in path.points],
            "boundary_runs": [p.boundary_runs for p in path.points]}, args)


def cmd_design(args) -> None:
    from .design import car_refuel_spec, d_efficiency_lower_bound, default_design_config, design_search, load_spec
    spec = load_spec(args.spec) if args.spec else car_refuel_spec()
    n = args.particles or args.swarm_size or 200
    base = default_design_config(args.k, n, args.seed, args.iterations)
    cfg = base.with_(phi=args.phi, algorithm=args.algo, max_evals=args.evals or base.max_evals,
                     tolerance=base.tolerance if args.tolerance is None else args.tolerance).validate()
    start = time.perf_counter()
    result = design_search(spec, args.k, cfg)
    bound = d_efficiency_lower_bound(result.design, spec)
    if args.format == "csv" and args.out:
        result.design.write_csv(args.out, spec)
    else:
        _write({"names": [f.name for f in spec.factors], "points": result.design.points.tolist(),
                "weights": result.design.weights.tolist(), "log_det": result.log_det,
                "efficiency_lower_bound": bound.atwood, "exponential_bound": bound.exponential,
                "d_max": bound.d_max, "elapsed_s": time.perf_counter() - start}, args)


COMMANDS = {"bench": cmd_bench, "compare": cmd_compare, "scgtm": cmd_scgtm, "rasch": cmd_rasch,
            "survival": cmd_survival, "impute": cmd_impute, "scad": cmd_scad, "design": cmd_design}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            values = parse_config_file(known.config)
        except (ConfigurationError, OSError) as exc:
            parser.error(str(exc))
        command = next((a for a in argv if a in COMMANDS), None)
        if command is None:
            parser.error("a subcommand is required")
        subparser = parser._subparsers._group_actions[0].choices[command]
        dests = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in values.items():
            if key not in dests or key in ("help", "config"):
                parser.error(f"{known.config}: unknown key {key!r}")
            action = dests[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[key] = action.type(raw) if action.type else raw
                except ValueError:
                    parser.error(f"{known.config}: invalid value {raw!r} for {key}")
                if action.choices and defaults[key] not in action.choices:
                    parser.error(f"{known.config}: {key} must be one of {list(action.choices)}")
            action.required = False
        subparser.set_defaults(**defaults)
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except SwarmStatError as exc:
        print(f"swarmstat: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"swarmstat: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
