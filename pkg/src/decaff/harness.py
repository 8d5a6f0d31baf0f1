"""Experiment orchestration: instances, solver runs, seed batches and trace files.

The three reference cases
-------------------------
=====  =====  ======  ===  ======  =====  =========
case   nodes  graph   d    rank B  theta  eps_cons
=====  =====  ======  ===  ======  =====  =========
1      5      ring    40   1       0.3    1e-2
2      5      ring    40   3       0.3    1e-1
3      10     ER 0.3  100  1       0.1    10
=====  =====  ======  ===  ======  =====  =========

Seeds default to ``0..N-1``.  For the Erdos-Renyi case the graph is drawn from
the same seed as the instance data (stream 0 for the graph, stream 1 for the
data), so every seed gets its own graph.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .context import RunContext
from .network import erdos_renyi_connected, ring
from .problem import ProblemInstance, random_instance
from .solvers import apdg_run, globally_dual_run, locally_dual_run
from .trace import COMPLETED, CONVERGED, SolverTrace, StopCriterion

__all__ = [
    "CASES",
    "SOLVERS",
    "AggregateResult",
    "AllFailed",
    "ConfigError",
    "ExperimentConfig",
    "SolverStats",
    "SolverTrace",
    "TraceIOError",
    "UnknownCase",
    "aggregate",
    "emit_aggregate",
    "emit_trace",
    "read_trace",
    "reproduce_case",
    "run_batch",
    "run_instance",
    "run_single",
]

TRACE_COLUMNS = ("iter", "f_err", "cons_viol", "b_viol", "w_viol", "wall_ns")

SOLVERS = {
    "apdg": lambda inst, stop, cheby, ctx: apdg_run(inst, None, stop, cheby=cheby, ctx=ctx),
    "gdual": lambda inst, stop, cheby, ctx: globally_dual_run(inst, stop, cheby=cheby, ctx=ctx),
    "ldual": lambda inst, stop, cheby, ctx: locally_dual_run(inst, stop, cheby=cheby, ctx=ctx),
}

CASES = {
    1: dict(m=5, graph="ring", d=40, rank_B=1, theta=0.3, eps_cons=1e-2),
    2: dict(m=5, graph="ring", d=40, rank_B=3, theta=0.3, eps_cons=1e-1),
    3: dict(m=10, graph="er", p_edge=0.3, d=100, rank_B=1, theta=0.1, eps_cons=10.0),
}


class ConfigError(ValueError):
    pass


class UnknownCase(ConfigError):
    pass


class AllFailed(RuntimeError):
    """No seed converged for at least one solver; ``result`` holds the aggregate."""

    def __init__(self, solvers, result):
        super().__init__(f"no successful run for: {', '.join(solvers)}")
        self.solvers = list(solvers)
        self.result = result


class TraceIOError(OSError):
    pass


@dataclass
class ExperimentConfig:
    """Everything needed to rebuild and rerun an experiment.

    Either ``case`` (the reference parameters, individual fields may still be
    overridden) or explicit problem fields.  ``instance`` points at a saved
    instance file, in which case the problem fields are ignored and every seed
    reruns the same instance.
    """

    m: int = 5
    d: int = 40
    rank_B: int = 1
    theta: float = 0.3
    graph: str = "ring"
    p_edge: float = 0.3
    solvers: tuple = ("apdg", "gdual", "ldual")
    eps_cons: float | None = 1e-2
    max_iters: int | None = 20000
    seeds: tuple = (0,)
    cheby: bool = False
    gamma: float | None = None
    recipe: str = "uniform"
    case: int | None = None
    instance: str | None = None

    def __post_init__(self):
        self.solvers = tuple(self.solvers)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    @classmethod
    def for_case(cls, case: int, seeds=None, **overrides) -> "ExperimentConfig":
        if case not in CASES:
            raise UnknownCase(f"unknown case {case!r}; expected one of {sorted(CASES)}")
        params = dict(CASES[case], case=case)
        if seeds is not None:
            params["seeds"] = seeds
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(s < 0 or s >= 2**64 for s in self.seeds):
            raise ConfigError("seeds must be unsigned 64-bit integers")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad or not self.solvers:
            raise ConfigError(f"unknown solver(s) {bad}; choose from {sorted(SOLVERS)}")
        if self.case is not None and self.case not in CASES:
            raise UnknownCase(f"unknown case {self.case!r}; expected one of {sorted(CASES)}")
        if self.graph not in ("ring", "er"):
            raise ConfigError(f"graph must be 'ring' or 'er', got {self.graph!r}")
        if self.instance is None:
            if self.m < 1 or (self.graph == "ring" and self.m < 3):
                raise ConfigError(f"invalid node count {self.m} for graph {self.graph!r}")
            if not 0 < self.p_edge <= 1:
                raise ConfigError("edge probability must lie in (0, 1]")
            if self.theta <= 0:
                raise ConfigError("theta must be positive")
        if self.eps_cons is not None and self.eps_cons <= 0:
            raise ConfigError("eps_cons must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.eps_cons is None and self.max_iters is None:
            raise ConfigError("need a threshold or an iteration cap")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError("gamma must be positive")

    @property
    def stop(self) -> StopCriterion:
        return StopCriterion(eps_cons=self.eps_cons, max_iters=self.max_iters)

    def build_instance(self, seed: int) -> ProblemInstance:
        """Instance for ``seed``; BadRank surfaces from the problem module."""
        if self.instance is not None:
            inst = ProblemInstance.load(self.instance)
            return inst if self.gamma is None else inst.with_gamma(self.gamma)
        if self.graph == "ring":
            g = ring(self.m)
        else:
            g = erdos_renyi_connected(self.m, self.p_edge, seed)
        return random_instance(self.m, self.d, self.rank_B, self.theta, seed, g,
                               recipe=self.recipe, gamma=self.gamma)

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["solvers"] = list(self.solvers)
        obj["seeds"] = list(self.seeds)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def run_instance(inst: ProblemInstance, solvers, stop: StopCriterion,
                 cheby: bool = False) -> dict[str, SolverTrace]:
    """Run each solver on ``inst`` with its own fresh counters.

    A solver that raises gets a trace with status ``"error"`` and the message
    in ``info["error"]``; the other solvers still run.
    """
    inst.solution  # one exact solve, shared by all monitors
    out = {}
    for name in solvers:
        ctx = RunContext()
        try:
            tr = SOLVERS[name](inst, stop, cheby, ctx)
        except Exception as exc:  # noqa: BLE001 - reported per solver
            tr = SolverTrace(solver=name, status="error", counters=ctx.as_dict(),
                             info={"error": f"{type(exc).__name__}: {exc}"})
        out[name] = tr
    return out


def run_single(config: ExperimentConfig, seed: int | None = None) -> dict[str, SolverTrace]:
    """All selected solvers on the instance of one seed (default: the first)."""
    seed = config.seeds[0] if seed is None else seed
    inst = config.build_instance(seed)
    return run_instance(inst, config.solvers, config.stop, config.cheby)


def _run_seed(args):
    config, seed = args
    traces = run_single(config, seed)
    for tr in traces.values():
        tr.info.pop("y_final", None)  # large and not needed past the worker
    return seed, traces


def run_seeds(config: ExperimentConfig, jobs: int | None = None) -> list[tuple[int, dict]]:
    """``run_single`` for every seed, in seed order regardless of completion order."""
    jobs = jobs or os.cpu_count() or 1
    work = [(config, s) for s in config.seeds]
    if jobs == 1 or len(work) == 1:
        return [_run_seed(w) for w in work]
    with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
        return list(pool.map(_run_seed, work))


@dataclass
class SolverStats:
    mean_iters: float | None
    mean_time_s: float | None
    success_rate: float
    n_seeds: int
    failures: dict = field(default_factory=dict)  # seed -> status

    def to_json(self) -> dict:
        return {"mean_iters": self.mean_iters, "mean_time_s": self.mean_time_s,
                "success_rate": self.success_rate, "n_seeds": self.n_seeds}


@dataclass
class AggregateResult:
    """Per-solver means over successful seeds; failures are only counted."""

    case: int | None
    solvers: dict[str, SolverStats]

    def to_json(self) -> dict:
        return {"case": self.case,
                "solvers": {k: v.to_json() for k, v in self.solvers.items()}}


def _succeeded(tr: SolverTrace) -> bool:
    return tr.status in (CONVERGED, COMPLETED)


def _time_to_settle(tr: SolverTrace) -> float:
    k = tr.iterations
    idx = min(int(np.searchsorted(tr.iters, k)), len(tr.wall_ns) - 1)
    return tr.wall_ns[idx] * 1e-9


def aggregate(results, solvers, case: int | None = None) -> AggregateResult:
    """Fold ``[(seed, {solver: trace})]`` into an :class:`AggregateResult`."""
    stats = {}
    for name in solvers:
        its, times, failures = [], [], {}
        for seed, traces in results:
            tr = traces[name]
            if _succeeded(tr):
                its.append(tr.iterations)
                times.append(_time_to_settle(tr))
            else:
                failures[seed] = tr.status
        n = len(results)
        stats[name] = SolverStats(
            mean_iters=float(np.mean(its)) if its else None,
            mean_time_s=float(np.mean(times)) if times else None,
            success_rate=len(its) / n,
            n_seeds=n,
            failures=failures,
        )
    return AggregateResult(case, stats)


def run_batch(config: ExperimentConfig, jobs: int | None = None,
              results: list | None = None) -> AggregateResult:
    """Run every seed and average iterations and time over the successes.

    Raises
    ------
    AllFailed
        If some solver succeeded on no seed.  The aggregate is attached.
    """
    if results is None:
        results = run_seeds(config, jobs)
    agg = aggregate(results, config.solvers, config.case)
    dead = [k for k, v in agg.solvers.items() if v.success_rate == 0]
    if dead:
        raise AllFailed(dead, agg)
    return agg


def reproduce_case(case_id: int, seeds=10, out_dir=None, jobs: int | None = None,
                   **overrides) -> tuple[AggregateResult, list[Path]]:
    """Run one of the reference cases and optionally write its files.

    Parameters
    ----------
    case_id : {1, 2, 3}
    seeds : int or sequence of int
        An integer ``N`` means seeds ``0..N-1``.
    out_dir : path, optional
        Receives ``case{c}_{solver}_seed{s}.csv`` per run and
        ``case{c}_aggregate.json``.
    **overrides
        Any :class:`ExperimentConfig` field, e.g. ``solvers`` or ``cheby``.
    """
    if case_id not in CASES:
        raise UnknownCase(f"unknown case {case_id!r}; expected one of {sorted(CASES)}")
    if isinstance(seeds, int):
        seeds = range(seeds)
    config = ExperimentConfig.for_case(case_id, seeds=tuple(seeds), **overrides)
    results = run_seeds(config, jobs)
    agg = aggregate(results, config.solvers, case_id)
    paths = []
    if out_dir is not None:
        paths = write_results(results, agg, out_dir, prefix=f"case{case_id}")
    dead = [k for k, v in agg.solvers.items() if v.success_rate == 0]
    if dead:
        raise AllFailed(dead, agg)
    return agg, paths


def write_results(results, agg: AggregateResult, out_dir, prefix: str = "run") -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TraceIOError(f"cannot create {out}: {exc}") from exc
    paths = []
    for seed, traces in results:
        for name, tr in traces.items():
            p = out / f"{prefix}_{name}_seed{seed}.csv"
            emit_trace(tr, p)
            paths.append(p)
    p = out / f"{prefix}_aggregate.json"
    emit_aggregate(agg, p)
    paths.append(p)
    return paths


def emit_trace(trace: SolverTrace, path) -> Path:
    """Write the per-iteration records as CSV; floats in shortest round-trip form."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in zip(trace.iters, trace.f_err, trace.cons_viol, trace.b_viol,
                           trace.w_viol, trace.wall_ns):
                w.writerow((int(row[0]), *(repr(float(v)) for v in row[1:5]), int(row[5])))
    except OSError as exc:
        raise TraceIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_trace(path) -> SolverTrace:
    """Parse a CSV written by :func:`emit_trace` (records only, no counters)."""
    tr = SolverTrace()
    try:
        with Path(path).open(newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows)
            if tuple(header) != TRACE_COLUMNS:
                raise ValueError(f"unexpected header {header}")
            for r in rows:
                tr.iters.append(int(r[0]))
                tr.f_err.append(float(r[1]))
                tr.cons_viol.append(float(r[2]))
                tr.b_viol.append(float(r[3]))
                tr.w_viol.append(float(r[4]))
                tr.wall_ns.append(int(r[5]))
    except OSError as exc:
        raise TraceIOError(f"cannot read {path}: {exc}") from exc
    return tr


def emit_aggregate(agg: AggregateResult, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(agg.to_json(), indent=2) + "\n")
    except OSError as exc:
        raise TraceIOError(f"cannot write {path}: {exc}") from exc
    return path
