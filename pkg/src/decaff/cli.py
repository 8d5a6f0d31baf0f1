"""Command-line front end: ``generate``, ``run`` and ``validate``.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 a solver
failed on some seed, 4 file I/O error, 5 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import (
    CASES,
    SOLVERS,
    AllFailed,
    ConfigError,
    ExperimentConfig,
    TraceIOError,
    aggregate,
    run_seeds,
    write_results,
)
from .network import Graph, GraphError, laplacian, validate_mixing
from .problem import BadRank, ProblemInstance, decode_array
from .spectral import SpectralError, spectral_bounds

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_IO = 4
EXIT_INVALID = 5

# dense cross-check of the A^T A bounds only below this many unknowns
DENSE_CHECK_MAX = 600

PRECEDENCE = ("Precedence: command-line flags > --config file > built-in case defaults "
              "> library defaults.")

# CLI flag dest -> ExperimentConfig field
_FIELDS = {
    "case": "case", "instance": "instance", "nodes": "m", "dim": "d", "rank_b": "rank_B",
    "theta": "theta", "edge_prob": "p_edge", "graph": "graph", "solvers": "solvers",
    "gamma": "gamma", "eps_cons": "eps_cons", "max_iters": "max_iters", "seeds": "seeds",
    "recipe": "recipe",
}


def _seed_list(text: str) -> tuple[int, ...]:
    """``"5"`` means seeds 0..4; ``"3,7,11"`` is an explicit list."""
    try:
        if "," in text:
            return tuple(int(s) for s in text.split(",") if s.strip())
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a seed count or list: {text!r}")
    if n < 1:
        raise argparse.ArgumentTypeError("seed count must be at least 1")
    return tuple(range(n))


def _solver_list(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in names if s not in SOLVERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown solver(s) {bad}; choose from {','.join(SOLVERS)}")
    return names


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _problem_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem", PRECEDENCE)
    g.add_argument("--case", type=int, choices=sorted(CASES),
                   help="reference case whose parameters are the defaults")
    g.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    g.add_argument("--nodes", type=int, help="number of nodes m")
    g.add_argument("--dim", type=int, help="dimension d of x")
    g.add_argument("--rank-b", type=int, help="rank of the constraint matrix B (1 <= r < d)")
    g.add_argument("--theta", type=_positive(float), help="ridge weight")
    g.add_argument("--graph", choices=("ring", "er"), help="communication graph family")
    g.add_argument("--edge-prob", type=float, help="edge probability of the ER graph")
    g.add_argument("--recipe", choices=("uniform", "gaussian"), help="random data recipe")
    g.add_argument("--gamma", type=_positive(float),
                   help="weight of the consensus block (default: condition-optimal value)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decaff",
        description="Decentralized optimization with affine constraints: instance "
                    "generation, solver runs and assumption checks.",
        epilog="Exit codes: 0 ok, 2 bad arguments, 3 solver failure, 4 I/O error, "
               "5 validation failure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a random instance file and print its constants",
                         description="Write a random instance and print mu, L, chi(W), "
                                     "chi(B^T B) and the optimal gamma.")
    _problem_args(gen)
    gen.add_argument("--seed", type=int, default=None, help="instance seed (default 0)")
    gen.add_argument("--instance", type=Path, help="output file (default OUT/instance_seedS.json)")
    gen.add_argument("--out", type=Path, default=Path("."), help="output directory")

    run = sub.add_parser("run", help="run solvers over seeds, write trace CSVs and an aggregate",
                         description="Run the selected solvers on one instance per seed.  "
                                     "Writes one CSV per (solver, seed) and an aggregate JSON "
                                     "to --out and prints the oracle and communication "
                                     "counters of every run.")
    _problem_args(run)
    run.add_argument("--instance", type=Path, help="instance file to solve instead of generating")
    seeds = run.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=_seed_list, help="seed count N (0..N-1) or comma list")
    seeds.add_argument("--seed", type=int, help="single seed")
    run.add_argument("--solvers", type=_solver_list, help="comma list of apdg,gdual,ldual")
    run.add_argument("--cheby", action="store_true", default=None,
                     help="Chebyshev-accelerate W and B^T B")
    run.add_argument("--eps-cons", type=_positive(float), help="stop once |A x| < EPS")
    run.add_argument("--max-iters", type=_positive(int), help="iteration cap per run")
    run.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    run.add_argument("--jobs", type=_positive(int), default=None,
                     help="parallel seeds (default: available cores)")

    val = sub.add_parser("validate", help="check mixing matrix, operator bounds and constants",
                         description="Check an instance or graph file: W symmetric, PSD, "
                                     "graph-sparse with kernel span{1}; A^T A bounds against a "
                                     "dense eigen-solve; mu <= mu_t <= L_t <= L.")
    val.add_argument("--instance", type=Path, required=True, help="instance or graph JSON file")
    return parser


def build_config(args) -> ExperimentConfig:
    params: dict = {}
    file_obj = {}
    if getattr(args, "config", None) is not None:
        try:
            file_obj = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise TraceIOError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(file_obj, dict):
            raise ConfigError("config file must hold a JSON object")
    case = args.case if args.case is not None else file_obj.get("case")
    if case is not None:
        if case not in CASES:
            raise ConfigError(f"unknown case {case!r}")
        params.update(CASES[case], case=case)
    params.update(file_obj)
    for dest, name in _FIELDS.items():
        if dest == "instance" and args.command == "generate":
            continue  # there it names the output file
        v = getattr(args, dest, None)
        if v is not None:
            params[name] = str(v) if dest == "instance" else v
    if getattr(args, "seed", None) is not None:
        params["seeds"] = (args.seed,)
    if getattr(args, "cheby", None):
        params["cheby"] = True
    try:
        return ExperimentConfig(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _constants(inst: ProblemInstance) -> dict:
    red = inst.reduced
    return {
        "mu": inst.mu,
        "L": inst.L,
        "mu_t": red.mu_t,
        "L_t": red.L_t,
        "chi_W": inst.mixing.chi,
        "chi_BtB": inst.BtB_bounds.chi if inst.BtB_bounds is not None else None,
        "gamma": inst.gamma,
        "chi_AtA": inst.constraint.bounds.chi,
    }


def cmd_generate(args) -> int:
    config = build_config(args)
    seed = config.seeds[0]
    inst = config.build_instance(seed)
    const = _constants(inst)
    path = args.instance or Path(args.out) / f"instance_seed{seed}.json"
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        inst.save(path, extra={"constants": const})
    except OSError as exc:
        raise TraceIOError(f"cannot write {path}: {exc}") from exc
    print(f"instance      {path}")
    print(f"mu            {const['mu']:.6g}")
    print(f"L             {const['L']:.6g}")
    print(f"chi(W)        {const['chi_W']:.6g}")
    chi_b = const["chi_BtB"]
    print(f"chi(B^T B)    {chi_b:.6g}" if chi_b is not None else "chi(B^T B)    n/a (B = 0)")
    print(f"gamma*        {const['gamma']:.6g}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = build_config(args)
    results = run_seeds(config, args.jobs)
    agg = aggregate(results, config.solvers, config.case)
    prefix = f"case{config.case}" if config.case is not None else "run"
    write_results(results, agg, args.out, prefix=prefix)
    print(f"{'seed':>6s} {'solver':8s} {'status':10s} {'iters':>7s} {'steps':>7s} "
          f"{'grads':>7s} {'duals':>7s} {'comms':>9s} {'B mults':>9s}  chebyshev")
    for seed, traces in results:
        for name, tr in traces.items():
            c = tr.counters
            cheb = " ".join(f"{k}={tr.info[k]}" for k in ("K", "M") if k in tr.info)
            print(f"{seed:>6d} {name:8s} {tr.status:10s} {tr.iterations:>7d} {tr.steps:>7d} "
                  f"{c.get('gradient_calls', 0):>7d} {c.get('dual_calls', 0):>7d} "
                  f"{c.get('comm_rounds', 0):>9d} {c.get('b_mults', 0):>9d}  {cheb}")
            if "error" in tr.info:
                print(f"  {tr.info['error']}", file=sys.stderr)
    print()
    print(f"{'solver':8s} {'success':>8s} {'mean iters':>11s} {'mean time s':>12s}")
    failed = False
    for name, st in agg.solvers.items():
        it = f"{st.mean_iters:.1f}" if st.mean_iters is not None else "-"
        tm = f"{st.mean_time_s:.3f}" if st.mean_time_s is not None else "-"
        print(f"{name:8s} {st.success_rate:8.0%} {it:>11s} {tm:>12s}")
        failed |= bool(st.failures)
    print(f"results in {args.out}")
    return EXIT_SOLVER if failed else EXIT_OK


def validate_file(path) -> list[tuple[str, bool, str]]:
    """Checks as ``(clause, ok, message)``; stops early when later checks cannot run."""
    obj = json.loads(Path(path).read_text())
    graph = Graph.from_json(obj["graph"] if "graph" in obj else obj)
    W = decode_array(obj["W"]) if "W" in obj else laplacian(graph).W
    checks = []
    report = validate_mixing(W, graph)
    for clause, ok in report.checks.items():
        checks.append((f"W {clause}", ok, report.messages[clause]))
    if not report.ok or "graph" not in obj:
        return checks

    inst = ProblemInstance.from_json(obj)
    A = inst.constraint
    b = A.bounds
    n = inst.m * inst.d
    if n <= DENSE_CHECK_MAX:
        dense = A.dense()
        ref = spectral_bounds(dense.T @ dense)
        err = max(abs(b.lambda_max - ref.lambda_max) / ref.lambda_max,
                  abs(b.lambda_min_plus - ref.lambda_min_plus) / ref.lambda_min_plus)
        checks.append(("A^T A bounds", err <= 1e-6, f"relative error vs dense = {err:.2e}"))
    else:
        checks.append(("A^T A bounds", True, f"skipped dense check ({n} unknowns)"))

    try:
        red = inst.reduced
        values = {"mu": inst.mu, "mu_t": red.mu_t, "L_t": red.L_t, "L": inst.L}
        source = "recomputed"
    except AssertionError as exc:
        checks.append(("constant ordering", False, str(exc)))
        return checks
    stored = obj.get("constants")
    if stored:
        # a stored block must agree with the data and respect the ordering itself
        for key, v in values.items():
            if key in stored and not np.isclose(stored[key], v, rtol=1e-9, atol=0):
                checks.append((f"stored {key}", False, f"stored {stored[key]!r}, data give {v!r}"))
        values = {k: stored.get(k, v) for k, v in values.items()}
        source = "stored"
    tol = 1e-9 * max(1.0, values["L"])
    ok = (values["mu"] <= values["mu_t"] + tol and values["mu_t"] <= values["L_t"] + tol
          and values["L_t"] <= values["L"] + tol)
    checks.append(("constant ordering", ok,
                   f"{source}: mu={values['mu']:.6g} mu_t={values['mu_t']:.6g} "
                   f"L_t={values['L_t']:.6g} L={values['L']:.6g}"))
    return checks


def cmd_validate(args) -> int:
    try:
        checks = validate_file(args.instance)
    except (KeyError, ValueError, TypeError) as exc:
        print(f"FAIL  file: {type(exc).__name__}: {exc}")
        return EXIT_INVALID
    for clause, ok, msg in checks:
        print(f"{'ok  ' if ok else 'FAIL'}  {clause}: {msg}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_INVALID


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, BadRank, GraphError, SpectralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AllFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
