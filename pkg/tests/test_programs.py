from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpicheck.calculus import (
    SKIP,
    Add,
    Barrier,
    Div,
    Eq,
    If,
    IntLit,
    IRecv,
    ISend,
    Mul,
    Neg,
    Seq,
    Set,
    Var,
    Wait,
    While,
)
from mpicheck.programs import (
    ProgramFormatError,
    cmd_from_json,
    cmd_to_json,
    dump_document,
    expr_from_json,
    expr_to_json,
    load_program,
    load_spec,
    spec_from_json,
    spec_to_json,
)
from mpicheck.mutants import EXAMPLE_SPEC_JSON, PAIR_SPEC_JSON, example_program

names = st.sampled_from(["x", "y", "z", "tag", "buf"])

exprs = st.recursive(
    st.one_of(st.integers(-(2**40), 2**40).map(IntLit), names.map(Var)),
    lambda sub: st.one_of(
        st.builds(Eq, sub, sub),
        st.builds(Add, sub, sub),
        st.builds(Mul, sub, sub),
        st.builds(Div, sub, sub),
        st.builds(Neg, sub),
    ),
    max_leaves=8,
)

atoms = st.one_of(
    st.just(SKIP),
    st.just(Barrier()),
    st.builds(IRecv, exprs, names),
    st.builds(ISend, exprs, names),
    st.builds(Wait, exprs),
    st.builds(Set, names, exprs),
)

commands = st.recursive(
    atoms,
    lambda sub: st.one_of(
        st.builds(If, exprs, sub, sub),
        st.builds(While, exprs, sub),
        st.builds(Seq, sub, sub),
    ),
    max_leaves=10,
)


@settings(max_examples=300)
@given(exprs)
def test_expr_round_trip(e):
    assert expr_from_json(json.loads(json.dumps(expr_to_json(e)))) == e


@settings(max_examples=300)
@given(commands)
def test_command_round_trip(c):
    back = cmd_from_json(json.loads(json.dumps(cmd_to_json(c))))
    assert cmd_to_json(back) == cmd_to_json(c)


def test_example_program_document():
    doc = json.loads(dump_document(example_program()))
    assert cmd_from_json(doc["program"]) == example_program()


@pytest.mark.parametrize(
    "bad",
    [
        {"frob": 1},
        {"isend": {"tag": 0}},
        {"set": {"var": "", "expr": 1}},
        {"seq": 3},
        42,
        {"wait": 1, "set": 2},
    ],
)
def test_malformed_commands(bad):
    with pytest.raises(ProgramFormatError):
        cmd_from_json(bad)


@pytest.mark.parametrize("doc", [EXAMPLE_SPEC_JSON, PAIR_SPEC_JSON])
def test_spec_round_trip(doc):
    spec = spec_from_json(doc)
    again = spec_from_json(spec_to_json(spec))
    for t in range(4):
        for fn in ("sender", "receiver", "message"):
            assert getattr(spec, fn)(t, 2) == getattr(again, fn)(t, 2)
    assert [spec.barrier_tag(b, 2) for b in range(3)] == [again.barrier_tag(b, 2) for b in range(3)]


def test_pair_spec_semantics():
    spec = spec_from_json(PAIR_SPEC_JSON)
    assert [spec.sender(t, 2) for t in range(4)] == [0, 1, 0, 1]
    assert [spec.receiver(t, 2) for t in range(4)] == [1, 0, 1, 0]
    assert [spec.message(t, 2) for t in range(2)] == [5, 7]
    assert [spec.barrier_tag(b, 2) for b in range(2)] == [0, 2]


def test_spec_collectives():
    doc = dict(EXAMPLE_SPEC_JSON, collectives=[[0, "gather", {"root": 1, "segment_len": 2}],
                                              [1, "allreduce", {"op": "max"}]])
    spec = spec_from_json(doc)
    assert spec.collective(0, 2).root == 1
    assert spec.collective(0, 2).segment_len(0, 2) == 2
    assert spec.collective(1, 2).op.value == "max"
    assert spec_to_json(spec)["collectives"][1] == [1, "allreduce", {"op": "max"}]


@pytest.mark.parametrize("doc", [{"sender": 0}, [1, 2], {**EXAMPLE_SPEC_JSON, "collectives": [[0, "scatter"]]}])
def test_malformed_specs(doc):
    with pytest.raises(ProgramFormatError):
        spec_from_json(doc)


def test_load_from_files(tmp_path):
    path = tmp_path / "doc.json"
    path.write_text(json.dumps({"program": cmd_to_json(example_program()), "spec": EXAMPLE_SPEC_JSON}))
    assert load_program(path) == example_program()
    assert load_spec(path).message(0, 2) == 5
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ProgramFormatError):
        load_program(bad)
