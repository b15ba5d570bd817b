"""Shared builders for the test modules."""

from __future__ import annotations

from mpicheck.calculus import TopologySpec


def one_way_spec(sender: int = 0, receiver: int = 1, message=5, tags: int = 1, count: int = 1,
                 collectives=None) -> TopologySpec:
    """Every tag goes ``sender -> receiver``; ``tags`` tags per barrier interval."""
    return TopologySpec(
        sender=lambda t, n: sender,
        receiver=lambda t, n: receiver,
        message=lambda t, n: message,
        barrier_tag=lambda b, n: b * tags,
        barrier_count=lambda n: count,
        collectives=collectives or {},
    )


def drive(gen, reply=None):
    """Run a runtime-API sub-generator standalone.

    Every yielded operation is answered with ``reply`` (a value or a function
    of the operation).  Returns the list of operations and the return value.
    """
    ops = []
    value = None
    try:
        op = next(gen)
        while True:
            ops.append(op)
            value = reply(op) if callable(reply) else reply
            op = gen.send(value)
    except StopIteration as stop:
        return ops, stop.value
