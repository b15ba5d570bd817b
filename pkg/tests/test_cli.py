from __future__ import annotations

import json

import pytest

from mpicheck.cli import EXIT_NEGATIVE, EXIT_OK, EXIT_USAGE, main
from mpicheck.mutants import CORPUS_DIR, MUTANTS

EXAMPLE = str(CORPUS_DIR / "fig5.json")
DEADLOCK = str(CORPUS_DIR / "deadlock_mutant.json")


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_explore_example(capsys):
    code, out, _ = run(capsys, "explore", EXAMPLE)
    doc = json.loads(out)
    assert code == EXIT_OK and doc["verdict"] == "Ok" and doc["n"] == 2
    assert all(env["x"] == 5 for envs in doc["terminal_envs"] for env in envs)


def test_explore_text_format(capsys):
    code, out, _ = run(capsys, "explore", EXAMPLE, "--format", "text")
    assert code == EXIT_OK and out.startswith("Ok: ")


def test_explore_deadlock_mutant(capsys):
    code, out, _ = run(capsys, "explore", DEADLOCK)
    assert code == EXIT_NEGATIVE and json.loads(out)["violations"][0]["axiom"] == "AtWait"
    code, out, _ = run(capsys, "explore", DEADLOCK, "--no-monitor")
    assert code == EXIT_NEGATIVE and json.loads(out)["verdict"] == "DeadlockFound"


@pytest.mark.parametrize("name", sorted(MUTANTS))
def test_every_mutant_exits_1(capsys, name):
    code, out, _ = run(capsys, "explore", str(CORPUS_DIR / f"mutant_{name}.json"))
    assert code == EXIT_NEGATIVE
    assert MUTANTS[name].axiom in {v["axiom"] for v in json.loads(out)["violations"]}


def test_separate_spec_file(tmp_path, capsys):
    doc = json.loads((CORPUS_DIR / "fig5.json").read_text())
    prog, spec = tmp_path / "p.json", tmp_path / "s.json"
    prog.write_text(json.dumps(doc["program"]))
    spec.write_text(json.dumps(doc["spec"]))
    code, out, _ = run(capsys, "explore", str(prog), str(spec), "--n", "2")
    assert code == EXIT_OK


def test_malformed_input_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(capsys, "explore", str(bad))
    assert code == EXIT_USAGE and "mpicheck: error" in err
    code, _, _ = run(capsys, "explore", str(tmp_path / "missing.json"))
    assert code == EXIT_USAGE


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["explore", EXAMPLE, "--frobnicate"])
    assert exc.value.code == 2


def test_dot_output(tmp_path, capsys):
    dot = tmp_path / "g.dot"
    code, _, _ = run(capsys, "explore", EXAMPLE, "--dot", str(dot))
    text = dot.read_text()
    assert code == EXIT_OK and text.startswith("digraph") and "->" in text


def test_max_states_env(monkeypatch, capsys):
    monkeypatch.setenv("MPICHECK_MAX_STATES", "3")
    code, out, _ = run(capsys, "explore", EXAMPLE)
    assert code == EXIT_NEGATIVE and json.loads(out)["verdict"] == "BoundExceeded"
    code, out, _ = run(capsys, "explore", EXAMPLE, "--max-states", "1000")
    assert code == EXIT_OK


def test_run_is_deterministic(capsys):
    first = run(capsys, "run", EXAMPLE, "--seed", "7")
    second = run(capsys, "run", EXAMPLE, "--seed", "7")
    assert first == second and first[0] == EXIT_OK
    assert json.loads(first[1])["seed"] == 7


@pytest.mark.parametrize("row, boxes", [("top", 6), ("bottom", 6)])
def test_trace_rows(capsys, row, boxes):
    code, out, _ = run(capsys, "trace", str(CORPUS_DIR / f"fig5_{row}_row_trace.json"))
    assert code == EXIT_OK
    assert all(f"State {k}" in out for k in range(boxes))
    # the rows stop before the closing barrier
    assert "final state: running" in out


def test_trace_of_found_deadlock(tmp_path, capsys):
    _, out, _ = run(capsys, "explore", DEADLOCK, "--no-monitor")
    doc = json.loads((CORPUS_DIR / "deadlock_mutant.json").read_text()) | {"trace": json.loads(out)["trace"]}
    path = tmp_path / "t.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "trace", str(path))
    assert code == EXIT_OK and "final state: deadlock" in out


def test_invalid_trace_exits_1(tmp_path, capsys):
    doc = json.loads((CORPUS_DIR / "fig5_top_row_trace.json").read_text())
    doc["steps"][3], doc["steps"][4] = doc["steps"][4], doc["steps"][3]
    path = tmp_path / "t.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "trace", str(path))
    assert code == EXIT_NEGATIVE and "invalid trace: edge 3" in out


def test_bench_convection(tmp_path, capsys):
    csv = tmp_path / "u.csv"
    code, out, _ = run(capsys, "bench", "convection", "--n", "4", "--check", "--csv", str(csv))
    doc = json.loads(out)
    assert code == EXIT_OK and doc["equivalent"] and doc["reports"]["solution"]["mode"] == "Exact"
    assert len(csv.read_text().split(",")) == 40


@pytest.mark.parametrize(
    "argv",
    [
        ["bench", "heat", "--n", "3"],  # 32 rows do not split three ways
        ["bench", "convection", "--iters", "5"],  # flag belongs to another benchmark
        ["bench", "heat", "--cfl", "0.5"],  # unstable time step
    ],
)
def test_bench_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == EXIT_USAGE


def test_bench_workers_text(capsys):
    code, out, _ = run(capsys, "bench", "poisson", "--n", "2", "--iters", "5", "--mode", "workers",
                       "--format", "text", "--check")
    assert code == EXIT_OK and "grid: Exact pass" in out
