"""Real multi-worker execution: one thread per rank, data exchanged through a
shared hub.

Small messages (at most ``eager_bytes``) are buffered as soon as they are
sent, so the sender's wait returns at once.  Larger ones take the rendezvous
path: the payload stays with the sender until the receiver waits for it, and
the sender's wait blocks until that has happened.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any

from ..arrays import LockError
from ..calculus import TopologySpec
from .sim import RankProgram, _Finished, _violation_of
from .world import (
    OpCollective,
    OpIRecv,
    OpISend,
    OpWait,
    PreconditionViolation,
    World,
    check_collective_match,
    collective_results,
)

DEFAULT_EAGER_BYTES = 4096


class WorkerDeadlock(RuntimeError):
    """No worker made progress before the timeout."""


class _Aborted(Exception):
    pass


@dataclass
class WorkersOutcome:
    results: list[Any]
    violations: list = field(default_factory=list)
    deadlock: str | None = None
    eager_messages: int = 0
    rendezvous_messages: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations and self.deadlock is None


class _Hub:
    def __init__(self, n: int, spec: TopologySpec, eager_bytes: int, timeout: float):
        self.n = n
        self.spec = spec
        self.eager_bytes = eager_bytes
        self.timeout = timeout
        self.cond = threading.Condition()
        self.sends: dict[int, Any] = {}  # rendezvous payloads still with the sender
        self.recvs: set[int] = set()
        self.messages: dict[int, Any] = {}  # buffered payloads
        self.delivered: set[int] = set()
        self.coll_ops: dict[int, Any] = {}
        self.coll_results: list[Any] | None = None
        self.generation = 0
        self.index = 0
        self.aborted = False
        self.eager = 0
        self.rendezvous = 0

    def _wait_for(self, pred, what: str) -> None:
        if not self.cond.wait_for(lambda: self.aborted or pred(), self.timeout):
            self.aborted = True
            self.cond.notify_all()
            raise WorkerDeadlock(what)
        if self.aborted:
            raise _Aborted()

    def isend(self, tag: int, payload) -> None:
        with self.cond:
            if payload.nbytes <= self.eager_bytes:
                self.messages[tag] = payload
                self.eager += 1
            else:
                self.sends[tag] = payload
                self.rendezvous += 1
            self.cond.notify_all()

    def irecv(self, tag: int) -> None:
        with self.cond:
            self.recvs.add(tag)
            self.cond.notify_all()

    def wait_send(self, rank: int, tag: int) -> None:
        with self.cond:
            self._wait_for(lambda: tag not in self.sends, f"rank {rank} waiting to send tag {tag}")

    def wait_recv(self, rank: int, tag: int):
        with self.cond:
            self._wait_for(lambda: tag in self.messages or tag in self.sends,
                           f"rank {rank} waiting to receive tag {tag}")
            payload = self.messages.pop(tag, None)
            if payload is None:
                payload = self.sends.pop(tag)
            self.recvs.discard(tag)
            self.delivered.add(tag)
            self.cond.notify_all()
            return payload

    def collective(self, rank: int, op: OpCollective):
        with self.cond:
            gen = self.generation
            self.coll_ops[rank] = op
            if len(self.coll_ops) == self.n:
                ops = [self.coll_ops[r] for r in range(self.n)]
                problem = check_collective_match(ops, self.spec, self.index, self.n)
                if problem is not None:
                    self.aborted = True
                    self.cond.notify_all()
                    raise PreconditionViolation("AtBarrier", "collective_mismatch", rank, problem, None)
                self.coll_results = collective_results(ops)
                self.coll_ops = {}
                self.index += 1
                self.generation += 1
                self.cond.notify_all()
            else:
                self._wait_for(lambda: self.generation != gen, f"rank {rank} waiting at collective {self.index}")
            return self.coll_results[rank]

    def abort(self) -> None:
        with self.cond:
            self.aborted = True
            self.cond.notify_all()


def run_workers(
    program: RankProgram,
    spec: TopologySpec,
    n: int,
    eager_bytes: int = DEFAULT_EAGER_BYTES,
    timeout: float = 10.0,
    checked: bool = True,
) -> WorkersOutcome:
    """Run every rank in its own thread until all return or something fails."""
    hub = _Hub(n, spec, eager_bytes, timeout)
    results: list[Any] = [None] * n
    violations: list = []
    deadlocks: list[str] = []
    lock = threading.Lock()

    def worker(rank: int) -> None:
        gen = program(World(rank, n, spec, checked))
        value: Any = None
        first = True
        try:
            while True:
                try:
                    op = gen.send(None) if first else gen.send(value)
                except StopIteration as stop:
                    results[rank] = _Finished(stop.value).value
                    return
                first = False
                value = None
                match op:
                    case OpISend(tag, payload):
                        hub.isend(tag, payload)
                    case OpIRecv(tag):
                        hub.irecv(tag)
                    case OpWait(tag, "send"):
                        hub.wait_send(rank, tag)
                    case OpWait(tag, _):
                        value = hub.wait_recv(rank, tag)
                    case OpCollective():
                        value = hub.collective(rank, op)
        except (PreconditionViolation, LockError) as exc:
            with lock:
                violations.append(_violation_of(exc, rank))
            hub.abort()
        except WorkerDeadlock as exc:
            with lock:
                deadlocks.append(str(exc))
        except _Aborted:
            pass

    threads = [threading.Thread(target=worker, args=(r,), name=f"rank-{r}", daemon=True) for r in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return WorkersOutcome(
        results,
        violations,
        "; ".join(sorted(deadlocks)) or None,
        hub.eager,
        hub.rendezvous,
    )
