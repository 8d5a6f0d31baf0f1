import json
import re

import numpy as np
import pytest

from decaff.cli import build_config, build_parser, main
from decaff.harness import read_trace
from decaff.problem import ProblemInstance, encode_array


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def counter_rows(stdout):
    """Per-run lines of ``run`` output as dicts keyed by column name."""
    rows = []
    for line in stdout.splitlines():
        parts = line.split()
        if len(parts) >= 9 and parts[0].isdigit():
            row = dict(zip(("seed", "solver", "status", "iters", "steps", "grads", "duals",
                            "comms", "b_mults"), parts))
            for key in ("seed", "iters", "steps", "grads", "duals", "comms", "b_mults"):
                row[key] = int(row[key])
            row.update(kv.split("=") for kv in parts[9:])
            rows.append(row)
    return rows


# generate

def test_generate_writes_instance_and_summary(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "generate", "--case", 1, "--seed", 0, "--out", tmp_path)
    assert code == 0
    path = tmp_path / "instance_seed0.json"
    inst = ProblemInstance.load(path)
    assert (inst.m, inst.d, inst.p) == (5, 40, 40)
    assert np.linalg.matrix_rank(inst.B) == 1
    for label in ("mu", "L", "chi(W)", "chi(B^T B)", "gamma*"):
        assert re.search(rf"^{re.escape(label)}\s+\S+", out, re.M), label
    stored = json.loads(path.read_text())["constants"]
    assert stored["mu"] == pytest.approx(inst.mu, rel=1e-12)
    assert stored["gamma"] == pytest.approx(inst.gamma, rel=1e-12)


def test_generate_full_rank_b_is_usage_error(tmp_path, capsys):
    code, _, err = run_cli(capsys, "generate", "--rank-b", 40, "--dim", 40, "--out", tmp_path)
    assert code == 2
    assert "rank" in err.lower()
    assert not list(tmp_path.iterdir())


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run_cli(capsys, "generate", "--case", 3, "--seed", 4, "--instance", p)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_generate_seed_changes_data(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run_cli(capsys, "generate", "--case", 1, "--seed", 0, "--instance", a)
    run_cli(capsys, "generate", "--case", 1, "--seed", 1, "--instance", b)
    assert a.read_bytes() != b.read_bytes()


# run

def test_run_case1_five_seeds_file_count(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", "--case", 1, "--seeds", 5, "--solvers", "apdg,gdual,ldual",
                           "--out", tmp_path, "--jobs", 1)
    assert code == 0
    csvs = sorted(tmp_path.glob("*.csv"))
    jsons = sorted(tmp_path.glob("*.json"))
    assert len(csvs) == 15 and len(jsons) == 1
    agg = json.loads(jsons[0].read_text())
    assert set(agg["solvers"]) == {"apdg", "gdual", "ldual"}
    tr = read_trace(tmp_path / "case1_ldual_seed3.csv")
    assert tr.iters == list(range(1, len(tr) + 1)) and tr.cons_viol[-1] < 1e-2
    assert len(counter_rows(out)) == 15


def test_run_case2_single_solver(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", "--case", 2, "--seed", 0, "--solvers", "ldual",
                           "--out", tmp_path)
    assert code == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"case2_ldual_seed0.csv", "case2_aggregate.json"}
    assert [r["solver"] for r in counter_rows(out)] == ["ldual"]


def test_run_case3_cheby_counters(tmp_path, capsys):
    # one Chebyshev-replaced W^2 product costs K gossip rounds per dual step,
    # APDG spends 6 of them per iteration
    code, out, _ = run_cli(capsys, "run", "--case", 3, "--seed", 0, "--cheby", "--out", tmp_path)
    assert code == 0
    rows = {r["solver"]: r for r in counter_rows(out)}
    assert set(rows) == {"apdg", "gdual", "ldual"}
    for name in ("gdual", "ldual"):
        r = rows[name]
        K = int(r["K"])
        assert K >= 2
        assert r["duals"] == r["steps"]
        assert r["comms"] == K * r["steps"]
    r = rows["apdg"]
    assert r["comms"] == 6 * int(r["K"]) * r["steps"]
    assert r["grads"] == r["steps"]


def test_run_from_instance_file(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    run_cli(capsys, "generate", "--case", 1, "--seed", 2, "--instance", inst_path)
    code, out, _ = run_cli(capsys, "run", "--instance", inst_path, "--solvers", "ldual",
                           "--eps-cons", 1e-2, "--out", tmp_path / "res")
    assert code == 0
    assert (tmp_path / "res" / "run_ldual_seed0.csv").exists()


def test_run_solver_failure_exit_3(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", "--case", 1, "--seed", 0, "--solvers", "apdg",
                           "--max-iters", 3, "--out", tmp_path)
    assert code == 3
    assert counter_rows(out)[0]["status"] == "max_iters"


def test_run_unwritable_out_exit_4(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    code, _, err = run_cli(capsys, "run", "--case", 1, "--seed", 0, "--solvers", "ldual",
                           "--out", blocker / "sub")
    assert code == 4
    assert err.startswith("error:")


def test_run_missing_instance_exit_4(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "run", "--instance", tmp_path / "nope.json", "--out", tmp_path)
    assert code == 4


def test_bad_argument_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--case", "7"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "--case", "1", "--solvers", "admm"])
    assert exc.value.code == 2


def test_bad_config_file_exit_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"case": 1, "no_such_field": 3}))
    assert run_cli(capsys, "run", "--config", cfg, "--out", tmp_path)[0] == 2


# validate

def _generated(tmp_path, capsys, seed=0):
    path = tmp_path / "inst.json"
    run_cli(capsys, "generate", "--case", 1, "--seed", seed, "--instance", path)
    return path


def test_validate_generated_instance(tmp_path, capsys):
    path = _generated(tmp_path, capsys)
    code, out, _ = run_cli(capsys, "validate", "--instance", path)
    assert code == 0
    assert "FAIL" not in out
    for clause in ("W sparsity", "W kernel", "A^T A bounds", "constant ordering"):
        assert clause in out


def test_validate_graph_only_file(tmp_path, capsys):
    path = _generated(tmp_path, capsys)
    g = tmp_path / "graph.json"
    g.write_text(json.dumps(json.loads(path.read_text())["graph"]))
    code, out, _ = run_cli(capsys, "validate", "--instance", g)
    assert code == 0 and "W sparsity" in out


def test_validate_broken_sparsity(tmp_path, capsys):
    path = _generated(tmp_path, capsys)
    obj = json.loads(path.read_text())
    inst = ProblemInstance.load(path)
    W = inst.mixing.W.copy()
    # nodes 0 and 2 are not adjacent on the 5-ring; keep symmetry and zero row sums
    W[0, 2] = W[2, 0] = -0.5
    W[0, 0] += 0.5
    W[2, 2] += 0.5
    obj["W"] = encode_array(W)
    path.write_text(json.dumps(obj))
    code, out, _ = run_cli(capsys, "validate", "--instance", path)
    assert code == 5
    assert re.search(r"^FAIL\s+W sparsity", out, re.M)


def test_validate_constant_ordering_violation(tmp_path, capsys):
    path = _generated(tmp_path, capsys)
    obj = json.loads(path.read_text())
    obj["constants"]["mu_t"] = 0.5 * obj["constants"]["mu"]
    path.write_text(json.dumps(obj))
    code, out, _ = run_cli(capsys, "validate", "--instance", path)
    assert code == 5
    assert re.search(r"^FAIL\s+constant ordering", out, re.M)


def test_validate_garbage_file(tmp_path, capsys):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"hello": 1}))
    assert run_cli(capsys, "validate", "--instance", p)[0] == 5


# configuration

def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"case": 1, "theta": 0.5, "eps_cons": 0.05}))
    parser = build_parser()
    c = build_config(parser.parse_args(["run", "--config", str(cfg)]))
    assert (c.m, c.d, c.theta, c.eps_cons) == (5, 40, 0.5, 0.05)
    c = build_config(parser.parse_args(["run", "--config", str(cfg), "--theta", "0.9"]))
    assert (c.theta, c.eps_cons) == (0.9, 0.05)
    c = build_config(parser.parse_args(["run", "--case", "2"]))
    assert c.rank_B == 3 and c.eps_cons == 0.1


def test_seed_list_forms():
    parser = build_parser()
    assert build_config(parser.parse_args(["run", "--case", "1", "--seeds", "3"])).seeds == (0, 1, 2)
    assert build_config(parser.parse_args(["run", "--case", "1", "--seeds", "4,9"])).seeds == (4, 9)
    assert build_config(parser.parse_args(["run", "--case", "1", "--seed", "7"])).seeds == (7,)


@pytest.mark.parametrize("command,flags", [
    ("generate", ["--case", "--config", "--nodes", "--dim", "--rank-b", "--theta", "--graph",
                  "--edge-prob", "--gamma", "--seed", "--instance", "--out"]),
    ("run", ["--case", "--config", "--instance", "--nodes", "--dim", "--rank-b", "--theta",
             "--graph", "--edge-prob", "--gamma", "--seed", "--seeds", "--solvers", "--cheby",
             "--eps-cons", "--max-iters", "--out", "--jobs"]),
    ("validate", ["--instance"]),
])
def test_help_lists_flags(command, flags, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in flags:
        assert flag in out, flag
    assert "precedence" in out.lower() or command == "validate"
