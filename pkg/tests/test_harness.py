import json

import numpy as np
import pytest

from conftest import zero_data_instance
from decaff.harness import (
    AggregateResult,
    AllFailed,
    ConfigError,
    ExperimentConfig,
    SolverTrace,
    TraceIOError,
    UnknownCase,
    aggregate,
    emit_aggregate,
    emit_trace,
    read_trace,
    reproduce_case,
    run_batch,
    run_instance,
    run_seeds,
    run_single,
)
from decaff.trace import StopCriterion


def tiny_config(**kw):
    params = dict(m=4, d=6, rank_B=2, theta=0.5, eps_cons=1e-3, seeds=(0, 1, 2))
    params.update(kw)
    return ExperimentConfig(**params)


# configuration

def test_case_parameters():
    c1 = ExperimentConfig.for_case(1)
    assert (c1.m, c1.graph, c1.d, c1.rank_B, c1.eps_cons) == (5, "ring", 40, 1, 1e-2)
    assert ExperimentConfig.for_case(2).eps_cons == 1e-1
    c3 = ExperimentConfig.for_case(3)
    assert (c3.m, c3.graph, c3.p_edge, c3.d, c3.rank_B, c3.eps_cons) == (10, "er", 0.3, 100, 1, 10.0)


def test_case_instance_shape():
    inst = ExperimentConfig.for_case(1).build_instance(0)
    assert (inst.m, inst.d, np.linalg.matrix_rank(inst.B)) == (5, 40, 1)
    assert inst.mixing.graph.edges == ((0, 1), (0, 4), (1, 2), (2, 3), (3, 4))


def test_unknown_case():
    with pytest.raises(UnknownCase):
        ExperimentConfig.for_case(4)
    with pytest.raises(UnknownCase):
        reproduce_case(4, 1)


@pytest.mark.parametrize("bad", [
    dict(seeds=()),
    dict(solvers=("apdg", "newton")),
    dict(graph="star"),
    dict(m=2),
    dict(eps_cons=-1.0),
    dict(eps_cons=None, max_iters=None),
    dict(gamma=0.0),
    dict(p_edge=0.0, graph="er"),
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        tiny_config(**bad)


def test_config_json_round_trip():
    c = ExperimentConfig.for_case(3, seeds=(4, 5), cheby=True)
    again = ExperimentConfig.from_json(json.loads(json.dumps(c.to_json())))
    assert again == c
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"nodes": 3})


def test_er_graph_follows_seed():
    c = ExperimentConfig.for_case(3)
    g0, g1 = c.build_instance(0).mixing.graph, c.build_instance(1).mixing.graph
    assert g0 == c.build_instance(0).mixing.graph
    assert g0 != g1


# runs

def test_zero_data_traces_stop_immediately():
    traces = run_instance(zero_data_instance(), ("apdg", "gdual", "ldual"), StopCriterion(1e-2))
    for tr in traces.values():
        assert tr.status == "converged"
        assert tr.iterations in (0, 1)
        assert tr.cons_viol[-1] == 0.0


def test_run_single_fresh_contexts():
    traces = run_single(tiny_config())
    assert set(traces) == {"apdg", "gdual", "ldual"}
    assert traces["apdg"].counters["dual_calls"] == 0
    assert traces["gdual"].counters["gradient_calls"] == 0
    assert traces["ldual"].counters["dual_calls"] == traces["ldual"].steps


def test_case1_single_seed_converges():
    traces = run_single(ExperimentConfig.for_case(1, seeds=(0,)))
    for tr in traces.values():
        assert tr.status == "converged"
        assert tr.cons_viol[-1] < 1e-2


def test_solver_error_is_isolated(monkeypatch):
    from decaff import harness

    def boom(inst, stop, cheby, ctx):
        raise RuntimeError("kaput")

    monkeypatch.setitem(harness.SOLVERS, "gdual", boom)
    traces = run_single(tiny_config())
    assert traces["gdual"].status == "error"
    assert "kaput" in traces["gdual"].info["error"]
    assert traces["ldual"].status == "converged"


def test_batch_single_seed_equals_run():
    cfg = tiny_config(seeds=(7,))
    agg = run_batch(cfg)
    traces = run_single(cfg)
    for name, tr in traces.items():
        st = agg.solvers[name]
        assert st.mean_iters == tr.iterations
        assert (st.success_rate, st.n_seeds) == (1.0, 1)


def test_batch_order_independent_of_jobs():
    cfg = tiny_config()
    serial = run_seeds(cfg, jobs=1)
    pooled = run_seeds(cfg, jobs=2)
    assert [s for s, _ in pooled] == [0, 1, 2]
    for (_, a), (_, b) in zip(serial, pooled):
        for name in a:
            assert a[name].cons_viol == b[name].cons_viol


def fake_trace(status, iters=3):
    return SolverTrace(solver="x", iters=list(range(iters + 1)), cons_viol=[1.0] * (iters + 1),
                       wall_ns=[1000 * k for k in range(iters + 1)], status=status,
                       settled_at=iters if status == "converged" else None)


def test_aggregate_excludes_failures():
    results = [(0, {"s": fake_trace("converged", 10)}),
               (1, {"s": fake_trace("diverged", 4)}),
               (2, {"s": fake_trace("converged", 20)})]
    st = aggregate(results, ["s"]).solvers["s"]
    assert st.mean_iters == 15.0
    assert st.success_rate == pytest.approx(2 / 3)
    assert st.failures == {1: "diverged"}
    assert st.mean_time_s == pytest.approx(15e-6)


def test_all_failed(monkeypatch):
    cfg = tiny_config(eps_cons=1e-15, max_iters=3, seeds=(0,))
    with pytest.raises(AllFailed) as err:
        run_batch(cfg)
    assert set(err.value.solvers) == {"apdg", "gdual", "ldual"}
    assert isinstance(err.value.result, AggregateResult)


# files

def test_emit_empty_trace(tmp_path):
    p = emit_trace(SolverTrace(), tmp_path / "t.csv")
    assert p.read_text() == "iter,f_err,cons_viol,b_viol,w_viol,wall_ns\n"


def test_emit_two_rows(tmp_path):
    tr = SolverTrace(iters=[0, 1], f_err=[1.5, 0.1], cons_viol=[0.0, 0.3], b_viol=[0.0, 0.2],
                     w_viol=[0.0, 0.1], wall_ns=[5, 9])
    lines = emit_trace(tr, tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[2] == "1,0.1,0.3,0.2,0.1,9"


def test_emit_round_trip_is_exact(tmp_path):
    tr = run_single(tiny_config())["gdual"]
    back = read_trace(emit_trace(tr, tmp_path / "t.csv"))
    for col in ("iters", "f_err", "cons_viol", "b_viol", "w_viol", "wall_ns"):
        assert getattr(back, col) == getattr(tr, col)


def test_emit_deterministic_except_wall_time(tmp_path):
    cfg = tiny_config(seeds=(3,))
    a = emit_trace(run_single(cfg)["apdg"], tmp_path / "a.csv").read_text().splitlines()
    b = emit_trace(run_single(cfg)["apdg"], tmp_path / "b.csv").read_text().splitlines()
    strip = lambda lines: [ln.rsplit(",", 1)[0] for ln in lines]  # noqa: E731
    assert strip(a) == strip(b)


def test_emit_io_error(tmp_path):
    with pytest.raises(TraceIOError):
        emit_trace(SolverTrace(), tmp_path / "missing" / "t.csv")
    with pytest.raises(TraceIOError):
        read_trace(tmp_path / "nope.csv")


def test_reproduce_case_writes_files(tmp_path):
    agg, paths = reproduce_case(1, 2, out_dir=tmp_path, jobs=1, solvers=("ldual", "gdual"))
    names = sorted(p.name for p in paths)
    assert names == ["case1_aggregate.json", "case1_gdual_seed0.csv", "case1_gdual_seed1.csv",
                     "case1_ldual_seed0.csv", "case1_ldual_seed1.csv"]
    obj = json.loads((tmp_path / "case1_aggregate.json").read_text())
    assert obj["case"] == 1
    assert set(obj["solvers"]) == {"ldual", "gdual"}
    assert set(obj["solvers"]["ldual"]) == {"mean_iters", "mean_time_s", "success_rate", "n_seeds"}
    assert obj["solvers"]["ldual"]["mean_iters"] == agg.solvers["ldual"].mean_iters


def test_emit_aggregate(tmp_path):
    agg = aggregate([(0, {"s": fake_trace("converged")})], ["s"], case=2)
    obj = json.loads(emit_aggregate(agg, tmp_path / "a.json").read_text())
    assert obj == {"case": 2, "solvers": {"s": {"mean_iters": 3.0, "mean_time_s": 3e-6,
                                                "success_rate": 1.0, "n_seeds": 1}}}
