from __future__ import annotations

import numpy as np
import pytest

from mpicheck.arrays import LockedArray1D, LockedArray2D, Range1D, RowBlock
from mpicheck.benchmarks.convection import ConvectionConfig, convection_program, convection_sequential, convection_spec
from mpicheck.benchmarks.heat import HeatConfig
from mpicheck.benchmarks.poisson import PoissonConfig
from mpicheck.benchmarks.runner import explore_benchmark, run_benchmark
from mpicheck.calculus import AllReduce, Gather, ReduceOp, TopologySpec
from mpicheck.explorer import DeadlockFound, ExploreBounds, Ok, ViolationFound, explore_system, run_system_schedule
from mpicheck.runtime.sim import RuntimeSystem
from mpicheck.runtime.workers import run_workers
from mpicheck.runtime.world import (
    BufferConflict,
    ContributionMismatch,
    OpCollective,
    OpISend,
    OpWait,
    Payload,
    PreconditionViolation,
    SegmentMismatch,
    World,
    check_collective_match,
    collective_results,
    reduce_values,
)
from helpers import drive


def spec(n_tags=2, count=1, message=lambda t, n: Payload.of([float(t)]), collectives=None):
    """Tags 0..n_tags-1 per interval, even tags 0 -> 1, odd tags 1 -> 0."""
    return TopologySpec(
        sender=lambda t, n: t % 2,
        receiver=lambda t, n: 1 - t % 2,
        message=message,
        barrier_tag=lambda b, n: b * n_tags,
        barrier_count=lambda n: count,
        collectives=collectives or {},
    )


def world(rank=0, **kw):
    return World(rank, 2, spec(**kw))


def clause_of(fn):
    with pytest.raises(PreconditionViolation) as err:
        fn()
    return err.value.clause


def test_isend_locks_and_wait_releases():
    w = world()
    buf = LockedArray1D([0.0, 1.0])
    ops, req = drive(w.isend(buf, Range1D(0, 1), 0, dest=1))
    assert ops == [OpISend(0, Payload.of([0.0]))]
    assert buf.read_count[0] == 1
    drive(w.wait(req))
    assert buf.read_count[0] == 0 and req.completed and w.last_tag == 0


def test_send_preconditions():
    buf = LockedArray1D([0.0, 1.0])
    assert clause_of(lambda: drive(world().isend(buf, Range1D(1, 1), 0))) == "payload"
    assert clause_of(lambda: drive(world(rank=1).isend(buf, Range1D(0, 1), 0))) == "rank"
    assert clause_of(lambda: drive(world().isend(buf, Range1D(0, 1), 0, dest=0))) == "dest"
    assert clause_of(lambda: drive(world().isend(buf, Range1D(0, 1), 2))) == "interval"
    w = world()
    drive(w.isend(buf, Range1D(0, 1), 0))
    assert clause_of(lambda: drive(w.isend(buf, Range1D(0, 1), 0))) == "duplicate"


def test_recv_preconditions():
    buf = LockedArray1D(2)
    assert clause_of(lambda: drive(world(rank=0).irecv(buf, Range1D(0, 1), 0))) == "rank"
    assert clause_of(lambda: drive(world(rank=1).irecv(buf, Range1D(0, 2), 0))) == "length"
    w = world(rank=1, n_tags=4)
    drive(w.irecv(buf, Range1D(0, 1), 0))
    with pytest.raises(BufferConflict):
        drive(w.irecv(buf, Range1D(0, 1), 2))


def test_overlapping_sends_but_exclusive_receives():
    rows = LockedArray2D.from_grid(np.zeros((6, 3)))
    msg = lambda t, n: Payload.of(np.zeros(12))
    w = World(0, 2, TopologySpec(lambda t, n: 0, lambda t, n: 1, msg, lambda b, n: 4 * b, lambda n: 1))
    drive(w.isend(rows, RowBlock(0, 4), 0))
    drive(w.isend(rows, RowBlock(2, 4), 1))
    assert rows.read_count.max() == 2
    r = World(1, 2, w.spec)
    dst = LockedArray2D.from_grid(np.zeros((6, 3)))
    drive(r.irecv(dst, RowBlock(0, 4), 0))
    with pytest.raises(BufferConflict):
        drive(r.irecv(dst, RowBlock(2, 4), 1))


def test_wait_preconditions():
    buf = LockedArray1D([0.0, 1.0, 2.0, 3.0])
    w = World(0, 2, spec(n_tags=6))
    drive(w.isend(buf, Range1D(2, 1), 2))
    _, r4 = drive(w.isend(buf, Range1D(0, 1), 0))
    w.last_tag = 3
    assert clause_of(lambda: drive(w.wait(w.pending[("send", 2)]))) == "ordering"
    w2 = World(0, 2, spec(n_tags=6))
    _, req = drive(w2.isend(buf, Range1D(2, 1), 2))
    assert clause_of(lambda: drive(w2.wait(req))) == "skipped"  # tags 0 and 1 are ours too


def test_receive_gets_specified_payload():
    w = world(rank=1)
    buf = LockedArray1D([9.0, 9.0])
    _, req = drive(w.irecv(buf, Range1D(1, 1), 0))
    drive(w.wait(req), reply=Payload.of([0.0]))
    assert buf.values() == [9.0, 0.0]
    assert not buf.write_locked.any()


def test_barrier_preconditions_and_done():
    buf = LockedArray1D([0.0])
    w = world()
    drive(w.isend(buf, Range1D(0, 1), 0))
    assert clause_of(lambda: drive(w.barrier())) == "pending"
    w = world()
    assert clause_of(lambda: drive(w.barrier())) == "skipped"
    w = World(0, 2, spec(n_tags=0, count=1))
    assert not w.done
    drive(w.barrier())
    assert w.done and w.clct == 1
    assert clause_of(lambda: drive(w.barrier())) == "count"


def test_gather():
    segs = {0: Payload.of([1.0, 2.0]), 1: Payload.of([3.0, 4.0])}
    g = Gather(0, lambda r, n: 2, lambda r, n: segs[r])
    sp = spec(n_tags=0, collectives={0: g})
    out = LockedArray1D(4)
    w0 = World(0, 2, sp)
    whole = Payload.of([1.0, 2.0, 3.0, 4.0])
    ops, _ = drive(w0.gather(LockedArray1D([1.0, 2.0]), None, out, root=0), reply=whole)
    assert out.values() == [1.0, 2.0, 3.0, 4.0]
    ops1, _ = drive(World(1, 2, sp).gather(LockedArray1D([3.0, 4.0]), None, None, root=0))
    assert collective_results([ops[0], ops1[0]])[0] == whole
    with pytest.raises(SegmentMismatch):
        drive(World(1, 2, sp).gather(LockedArray1D([3.0, 5.0]), None, None, root=0))


def test_allreduce():
    assert reduce_values(ReduceOp.SUM, [1.0, 2.0, 3.0]) == 6.0
    assert reduce_values(ReduceOp.MAX, [-1.0, 5.0, 2.0]) == 5.0
    assert reduce_values(ReduceOp.MIN, [-1.0, 5.0, 2.0]) == -1.0
    assert reduce_values(ReduceOp.LAND, [1.0, 0.0]) == 0.0
    # left fold in rank order: (1e16 + 1) - 1e16 loses the 1
    assert reduce_values(ReduceOp.SUM, [1e16, 1.0, -1e16]) == 0.0
    sp = spec(n_tags=0, collectives={0: AllReduce(ReduceOp.SUM, lambda r, n: float(r + 1))})
    ops, value = drive(World(1, 2, sp).allreduce(2.0), reply=3.0)
    assert value == 3.0 and ops[0].value == 2.0
    with pytest.raises(ContributionMismatch):
        drive(World(1, 2, sp).allreduce(2.5))
    assert clause_of(lambda: drive(World(1, 2, sp).allreduce(2.0, ReduceOp.MAX))) == "op"


def test_collective_mismatch():
    sp = spec(n_tags=0)
    assert check_collective_match([OpCollective("barrier"), OpCollective("allreduce", 1.0, op=ReduceOp.SUM)], sp, 0, 2)
    assert check_collective_match([OpCollective("barrier")] * 2, sp, 0, 2) is None


# -- engines ------------------------------------------------------------------

SMALL = ConvectionConfig(nx=8, nt=2)


def test_sim_explores_convection():
    system = RuntimeSystem(convection_program(SMALL), convection_spec(SMALL), 2)
    v = explore_system(system, ExploreBounds(reduce_posts=True))
    assert isinstance(v, Ok) and len(v.terminal_digests) == 1
    out = system.result(v.terminals[0], 0)
    assert np.array_equal(out, convection_sequential(SMALL))


@pytest.mark.parametrize("name, cfg", [("convection", SMALL), ("poisson", PoissonConfig(8, 8, 2)),
                                       ("heat", HeatConfig(8, 8, 1))])
def test_explore_benchmarks_n2(name, cfg):
    _, v = explore_benchmark(name, cfg, 2, ExploreBounds(reduce_posts=True))
    assert isinstance(v, Ok) and len(v.terminal_digests) == 1


def _bad_payload(w):
    buf = LockedArray1D([123.0])
    if w.rank == 0:
        yield from w.send(buf, Range1D(0, 1), 0, dest=1)
    else:
        yield from w.recv(buf, Range1D(0, 1), 0, src=0)
    yield from w.barrier()


def _orphan(w):
    buf = LockedArray1D([0.0])
    if w.rank == 1:
        yield from w.recv(buf, Range1D(0, 1), 1, src=0)
    yield from w.barrier()


ONE_WAY = TopologySpec(lambda t, n: t % 2, lambda t, n: 1 - t % 2, lambda t, n: Payload.of([1.0]),
                       lambda b, n: 2 * b, lambda n: 1)


def test_sim_reports_precondition_violation():
    v = explore_system(RuntimeSystem(_bad_payload, ONE_WAY, 2))
    assert isinstance(v, ViolationFound)
    assert v.violations[0].axiom == "AtSend" and v.violations[0].detail["clause"] == "payload"


def test_sim_finds_deadlock():
    # tag 1 goes 1 -> 0, so rank 1 waits for a message addressed the wrong way;
    # unchecked worlds let the program run into the deadlock
    system = RuntimeSystem(_orphan, TopologySpec(lambda t, n: 0, lambda t, n: 1, lambda t, n: Payload.of([1.0]),
                                                 lambda b, n: 2 * b, lambda n: 1), 2, checked=False)
    v = explore_system(system, monitor=False)
    assert isinstance(v, DeadlockFound)
    _, w = run_system_schedule(system, seed=5, monitor=False)
    assert isinstance(w, DeadlockFound)


@pytest.mark.parametrize("eager", [0, 4096])
def test_workers_match_sequential(eager):
    out = run_workers(convection_program(ConvectionConfig()), convection_spec(ConvectionConfig()), 4,
                      eager_bytes=eager)
    assert out.ok
    assert np.array_equal(out.results[0], convection_sequential(ConvectionConfig()))
    if eager == 0:
        assert out.rendezvous_messages > 0 and out.eager_messages == 0
    else:
        assert out.eager_messages > 0 and out.rendezvous_messages == 0


def test_workers_report_violation_and_deadlock():
    out = run_workers(_bad_payload, ONE_WAY, 2, timeout=2.0)
    assert [v.axiom for v in out.violations] == ["AtSend"]
    spec_ = TopologySpec(lambda t, n: 0, lambda t, n: 1, lambda t, n: Payload.of([1.0]), lambda b, n: 2 * b,
                         lambda n: 1)
    out = run_workers(_orphan, spec_, 2, timeout=0.5, checked=False)
    assert out.deadlock is not None and not out.ok


@pytest.mark.parametrize("mode", ["sim", "workers"])
def test_run_benchmark_modes(mode):
    res = run_benchmark("convection", SMALL, 4 if SMALL.nx % 4 == 0 else 2, mode=mode)
    assert res.verdict == "ok" and res.equivalent
