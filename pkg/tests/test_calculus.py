from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpicheck.calculus import (
    BARRIER,
    SKIP,
    TAG_GAP_LIMIT,
    Add,
    Div,
    DivisionByZero,
    Eq,
    IntLit,
    Mul,
    Neg,
    Seq,
    TopologySpec,
    UnboundVariable,
    Var,
    eval_expr,
    expr_vars,
    initial_state,
    int_div,
    spec_errors,
    validate_topology,
)
from mpicheck.benchmarks.convection import ConvectionConfig, convection_spec
from mpicheck.benchmarks.heat import HeatConfig, heat_spec
from mpicheck.benchmarks.poisson import PoissonConfig, poisson_spec
from helpers import one_way_spec


@pytest.mark.parametrize(
    "expr, env, expected",
    [
        (Add(IntLit(2), Mul(IntLit(3), IntLit(4))), {}, 14),
        (Var("rank"), {"rank": 3, "size": 4}, 3),
        (Eq(IntLit(5), IntLit(5)), {}, 1),
        (Eq(IntLit(5), IntLit(6)), {}, 0),
        (Neg(IntLit(7)), {}, -7),
        (Div(IntLit(7), IntLit(2)), {}, 3),
    ],
)
def test_eval_examples(expr, env, expected):
    assert eval_expr(expr, env) == expected


def test_eval_errors():
    with pytest.raises(UnboundVariable):
        eval_expr(Var("x"), {})
    with pytest.raises(DivisionByZero):
        eval_expr(Div(IntLit(1), IntLit(0)), {})


@given(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6).filter(lambda b: b != 0))
def test_int_div_matches_eval(a, b):
    assert eval_expr(Div(IntLit(a), IntLit(b)), {}) == int_div(a, b)


@given(st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_eval_is_deterministic(a, b):
    e = Add(Mul(Var("a"), IntLit(3)), Neg(Var("b")))
    env = {"a": a, "b": b}
    assert eval_expr(e, env) == eval_expr(e, dict(env)) == 3 * a - b


def test_expr_vars():
    assert expr_vars(Add(Var("x"), Mul(Var("y"), IntLit(1)))) == {"x", "y"}


def test_initial_state_appends_one_barrier():
    S = initial_state(SKIP, 2)
    assert S.size == 2
    for i, p in enumerate(S.procs):
        assert p.cmd == Seq(SKIP, Seq(BARRIER, SKIP))
        assert dict(p.env) == {"rank": i, "size": 2}
        assert (p.last_tag, p.barriers_passed) == (-1, 0)
    assert not S.recv_buf and not S.send_buf and not S.msg_buf


def test_initial_state_needs_two_processes():
    with pytest.raises(ValueError):
        initial_state(SKIP, 1)


def test_initial_procs_differ_only_in_rank():
    S = initial_state(SKIP, 4)
    assert len({p.cmd for p in S.procs}) == 1
    assert [p.rank for p in S.procs] == [0, 1, 2, 3]


def _gap_spec(gap: int) -> TopologySpec:
    return one_way_spec(tags=gap)


def test_validate_running_example_spec():
    cfg = ConvectionConfig()
    assert spec_errors(validate_topology(convection_spec(cfg), range(2, 9))) == []


@pytest.mark.parametrize("gap, ok", [(TAG_GAP_LIMIT, True), (TAG_GAP_LIMIT + 1, False), (40000, False)])
def test_tag_gap_rule(gap, ok):
    kinds = [e.kind for e in spec_errors(validate_topology(_gap_spec(gap), [2]))]
    assert (kinds == []) == ok
    if not ok:
        assert "TagGapExceeded" in kinds


def test_rank_out_of_range():
    kinds = [e.kind for e in validate_topology(one_way_spec(sender=5), [2])]
    assert "RankOutOfRange" in kinds


def test_barrier_tag_must_start_at_zero_and_increase():
    spec = TopologySpec(lambda t, n: 0, lambda t, n: 1, lambda t, n: 5,
                        lambda b, n: 3 - b, lambda n: 2)
    kinds = {e.kind for e in validate_topology(spec, [2])}
    assert {"BarrierTagNotZero", "BarrierTagDecreasing"} <= kinds


def test_self_send_is_only_a_warning():
    errs = validate_topology(one_way_spec(sender=1, receiver=1), [2])
    assert errs and all(e.severity == "warning" for e in errs)
    assert spec_errors(errs) == []


@pytest.mark.parametrize("n", range(2, 9))
def test_benchmark_specs_valid(n):
    specs = [
        convection_spec(ConvectionConfig(nx=8 * 105)),
        poisson_spec(PoissonConfig(nx=8, ny=840, iters=2)),
        heat_spec(HeatConfig(nx=8, ny=840, nt=2)),
    ]
    for spec in specs:
        assert spec_errors(validate_topology(spec, [n])) == []
