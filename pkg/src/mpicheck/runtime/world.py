"""User-facing message-passing API over locked arrays.

A rank program is a generator function taking a :class:`World`.  Every
communication call is a sub-generator used with ``yield from``; it checks the
call's preconditions, yields one operation to whichever engine is driving the
program, and finishes the bookkeeping when the engine resumes it::

    def program(w):
        req = yield from w.isend(buf, Range1D(0, 1), tag)
        yield from w.wait(req)
        yield from w.barrier()
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..arrays import LockError, LockedArray1D, Region, _LockedBase
from ..calculus import AllReduce, Gather, PlainBarrier, ReduceOp, TopologySpec


class PreconditionViolation(Exception):
    """A runtime-API precondition failed.

    ``axiom`` names the calculus axiom the failed clause corresponds to.
    """

    def __init__(self, axiom: str, clause: str, rank: int, detail: str = "", tag: int | None = None):
        super().__init__(f"{axiom}/{clause} on rank {rank}: {detail}")
        self.axiom = axiom
        self.clause = clause
        self.rank = rank
        self.detail = detail
        self.tag = tag


class BufferConflict(PreconditionViolation):
    pass


class SegmentMismatch(PreconditionViolation):
    pass


class ContributionMismatch(PreconditionViolation):
    pass


@dataclass(frozen=True, eq=False)
class Payload:
    """Immutable snapshot of a message: shape plus little-endian float64 bytes.

    Equality is bitwise, so ``-0.0 != 0.0`` and NaNs with equal bits compare
    equal.
    """

    shape: tuple[int, ...]
    raw: bytes

    @classmethod
    def of(cls, values: Any) -> Payload:
        arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
        return cls(tuple(arr.shape), arr.tobytes())

    @classmethod
    def concat(cls, parts: list[Payload]) -> Payload:
        return cls.of(np.concatenate([p.array().reshape(-1) for p in parts]))

    def array(self) -> np.ndarray:
        return np.frombuffer(self.raw, dtype="<f8").reshape(self.shape).copy()

    @property
    def length(self) -> int:
        return len(self.raw) // 8

    @property
    def nbytes(self) -> int:
        return len(self.raw)

    def canonical_bytes(self) -> bytes:
        return repr(self.shape).encode() + hashlib.blake2b(self.raw, digest_size=16).digest()

    def digest(self) -> str:
        return hashlib.blake2b(self.canonical_bytes(), digest_size=16).hexdigest()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Payload) and self.shape == other.shape and self.raw == other.raw

    def __hash__(self) -> int:
        return hash((self.shape, self.raw))

    def __str__(self) -> str:
        vals = self.array().reshape(-1)
        shown = ", ".join(f"{v:.6g}" for v in vals[:3])
        more = ", .." if vals.size > 3 else ""
        return f"<{shown}{more}>"

    __repr__ = __str__


# -- operations yielded to the engine ---------------------------------------


@dataclass(frozen=True)
class OpISend:
    tag: int
    payload: Payload


@dataclass(frozen=True)
class OpIRecv:
    tag: int


@dataclass(frozen=True)
class OpWait:
    tag: int
    kind: str  # "send" or "recv"


@dataclass(frozen=True)
class OpCollective:
    kind: str  # "barrier", "gather" or "allreduce"
    value: Any = None
    root: int = 0
    op: ReduceOp | None = None


Op = OpISend | OpIRecv | OpWait | OpCollective


@dataclass
class Request:
    kind: str
    tag: int
    buffer: _LockedBase
    region: Region
    completed: bool = False


def reduce_values(op: ReduceOp, values: list[float]) -> float:
    """Left fold in the given (ascending rank) order."""
    acc = values[0]
    for v in values[1:]:
        if op is ReduceOp.SUM:
            acc = acc + v
        elif op is ReduceOp.MIN:
            acc = min(acc, v)
        elif op is ReduceOp.MAX:
            acc = max(acc, v)
        else:
            acc = 1.0 if (acc and v) else 0.0
    return acc


@dataclass
class World:
    rank: int
    size: int
    spec: TopologySpec
    checked: bool = True
    last_tag: int = -1
    clct: int = 0
    pending: dict[tuple[str, int], Request] = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return self.clct == self.spec.barrier_count(self.size)

    # -- helpers ------------------------------------------------------------

    def _fail(self, axiom: str, clause: str, detail: str = "", tag: int | None = None, cls=PreconditionViolation):
        raise cls(axiom, clause, self.rank, detail, tag)

    def _in_interval(self, tag: int) -> bool:
        n = self.size
        return self.spec.barrier_tag(self.clct, n) <= tag < self.spec.barrier_tag(self.clct + 1, n)

    def _no_between(self, lo: int, hi: int) -> list[int]:
        n = self.size
        return [
            v
            for v in range(max(lo + 1, 0), hi)
            if self.spec.sender(v, n) == self.rank or self.spec.receiver(v, n) == self.rank
        ]

    # -- point to point -----------------------------------------------------

    def isend(self, buf: _LockedBase, region: Region, tag: int, dest: int | None = None):
        n = self.size
        try:
            values = buf.read(region)
        except LockError as exc:
            self._fail("AtSend", "buffer", str(exc), tag, BufferConflict)
        payload = Payload.of(values)
        if self.checked:
            if self.spec.sender(tag, n) != self.rank:
                self._fail("AtSend", "rank", f"sender({tag}) = {self.spec.sender(tag, n)}", tag)
            if dest is not None and self.spec.receiver(tag, n) != dest:
                self._fail("AtSend", "dest", f"receiver({tag}) = {self.spec.receiver(tag, n)} != {dest}", tag)
            if ("send", tag) in self.pending:
                self._fail("AtSend", "duplicate", f"tag {tag} already pending", tag)
            if not self._in_interval(tag):
                self._fail("AtSend", "interval", f"tag {tag} outside collective interval {self.clct}", tag)
            if payload != self.spec.message(tag, n):
                self._fail("AtSend", "payload", f"payload {payload} != message({tag})", tag)
        try:
            buf.acquire_read(region)
        except LockError as exc:
            self._fail("AtSend", "buffer", str(exc), tag, BufferConflict)
        req = Request("send", tag, buf, region)
        self.pending[("send", tag)] = req
        yield OpISend(tag, payload)
        return req

    def irecv(self, buf: _LockedBase, region: Region, tag: int, src: int | None = None):
        n = self.size
        if self.checked:
            if self.spec.receiver(tag, n) != self.rank:
                self._fail("AtRecv", "rank", f"receiver({tag}) = {self.spec.receiver(tag, n)}", tag)
            if src is not None and self.spec.sender(tag, n) != src:
                self._fail("AtRecv", "src", f"sender({tag}) = {self.spec.sender(tag, n)} != {src}", tag)
            if ("recv", tag) in self.pending:
                self._fail("AtRecv", "duplicate", f"tag {tag} already pending", tag)
            if not self._in_interval(tag):
                self._fail("AtRecv", "interval", f"tag {tag} outside collective interval {self.clct}", tag)
            span = buf.span(region)
            expected = self.spec.message(tag, n)
            if span.stop - span.start != expected.length:
                self._fail("AtRecv", "length", f"region of {span.stop - span.start} for {expected.length}", tag)
        try:
            buf.acquire_write(region)
        except LockError as exc:
            self._fail("AtRecv", "buffer", str(exc), tag, BufferConflict)
        req = Request("recv", tag, buf, region)
        self.pending[("recv", tag)] = req
        yield OpIRecv(tag)
        return req

    def wait(self, req: Request):
        tag = req.tag
        if self.checked:
            if req.completed or self.pending.get((req.kind, tag)) is not req:
                self._fail("AtWait", "not_pending", f"request for tag {tag} is not pending", tag)
            if not tag > self.last_tag:
                self._fail("AtWait", "ordering", f"tag {tag} <= last tag {self.last_tag}", tag)
            skipped = self._no_between(self.last_tag, tag)
            if skipped:
                self._fail("AtWait", "skipped", f"tags {skipped[:4]} skipped", tag)
            if not self._in_interval(tag):
                self._fail("AtWait", "interval", f"tag {tag} outside collective interval {self.clct}", tag)
        result = yield OpWait(tag, req.kind)
        if req.kind == "recv":
            req.buffer.release_write(req.region)
            req.buffer.write(req.region, result.array())
        else:
            req.buffer.release_read(req.region)
        req.completed = True
        self.pending.pop((req.kind, tag), None)
        self.last_tag = tag

    def send(self, buf: _LockedBase, region: Region, tag: int, dest: int | None = None):
        req = yield from self.isend(buf, region, tag, dest)
        yield from self.wait(req)

    def recv(self, buf: _LockedBase, region: Region, tag: int, src: int | None = None):
        req = yield from self.irecv(buf, region, tag, src)
        yield from self.wait(req)

    # -- collectives --------------------------------------------------------

    def _collective_pre(self, kind: type) -> Any:
        n = self.size
        count = self.spec.barrier_count(n)
        if self.clct >= count:
            self._fail("AtBarrier", "count", f"collective {self.clct} beyond barrier_count {count}")
        coll = self.spec.collective(self.clct, n)
        if not self.checked:
            return coll
        if self.pending:
            tags = sorted(t for _, t in self.pending)
            self._fail("AtBarrier", "pending", f"requests {tags} not waited")
        v = self.spec.barrier_tag(self.clct + 1, n)
        if not v > self.last_tag:
            self._fail("AtBarrier", "order", f"barrier tag {v} <= last tag {self.last_tag}")
        skipped = self._no_between(self.last_tag, v)
        if skipped:
            self._fail("AtBarrier", "skipped", f"tags {skipped[:4]} skipped")
        if not isinstance(coll, kind):
            self._fail("AtBarrier", "collective_kind", f"collective {self.clct} is {type(coll).__name__}")
        return coll

    def barrier(self):
        self._collective_pre(PlainBarrier)
        yield OpCollective("barrier")
        self.clct += 1

    def gather(self, sendbuf: _LockedBase, region: Region | None, recvbuf: _LockedBase | None, root: int):
        n = self.size
        coll = self._collective_pre(Gather)
        try:
            values = sendbuf.read(region)
        except LockError as exc:
            self._fail("AtBarrier", "buffer", str(exc), cls=BufferConflict)
        segment = Payload.of(values.reshape(-1))
        if self.checked:
            if coll.root != root:
                self._fail("AtBarrier", "root", f"gather root {root} != {coll.root}")
            if segment.length != coll.segment_len(self.rank, n):
                self._fail("AtBarrier", "segment_len", f"{segment.length} != {coll.segment_len(self.rank, n)}",
                           cls=SegmentMismatch)
            if coll.expected_segment is not None and segment != coll.expected_segment(self.rank, n):
                self._fail("AtBarrier", "segment", "segment differs from its specification", cls=SegmentMismatch)
            if self.rank == root:
                total = sum(coll.segment_len(r, n) for r in range(n))
                if recvbuf is None or recvbuf.size != total:
                    self._fail("AtBarrier", "recvbuf", f"root buffer must hold {total} values", cls=SegmentMismatch)
        result = yield OpCollective("gather", segment, root)
        if self.rank == root and recvbuf is not None:
            recvbuf.write(None, result.array())
        self.clct += 1

    def allreduce(self, value: float, op: ReduceOp = ReduceOp.SUM):
        n = self.size
        coll = self._collective_pre(AllReduce)
        value = float(value)
        if self.checked:
            if coll.op is not op:
                self._fail("AtBarrier", "op", f"reduction {op.value} != {coll.op.value}")
            if coll.expected_contribution is not None:
                expected = float(coll.expected_contribution(self.rank, n))
                if Payload.of(value) != Payload.of(expected):
                    self._fail("AtBarrier", "contribution", f"{value!r} != {expected!r}", cls=ContributionMismatch)
        result = yield OpCollective("allreduce", value, op=op)
        self.clct += 1
        return result


def collective_results(ops: list[OpCollective]) -> list[Any]:
    """Per-rank results of one collective given every rank's operation."""
    first = ops[0]
    if first.kind == "barrier":
        return [None] * len(ops)
    if first.kind == "gather":
        whole = Payload.concat([op.value for op in ops])
        return [whole if r == first.root else None for r in range(len(ops))]
    total = reduce_values(first.op, [op.value for op in ops])
    return [total] * len(ops)


def check_collective_match(ops: list[OpCollective], spec: TopologySpec, index: int, n: int) -> str | None:
    """A description of any disagreement between ranks or with the spec."""
    kinds = {op.kind for op in ops}
    if len(kinds) != 1:
        return f"ranks disagree on collective kind: {sorted(kinds)}"
    first = ops[0]
    if any(op.root != first.root or op.op != first.op for op in ops):
        return "ranks disagree on collective parameters"
    coll = spec.collective(index, n)
    want = {PlainBarrier: "barrier", Gather: "gather", AllReduce: "allreduce"}[type(coll)]
    if first.kind != want:
        return f"collective {index} should be {want}, got {first.kind}"
    return None


__all__ = [
    "BufferConflict",
    "ContributionMismatch",
    "LockedArray1D",
    "Op",
    "OpCollective",
    "OpIRecv",
    "OpISend",
    "OpWait",
    "Payload",
    "PreconditionViolation",
    "Request",
    "SegmentMismatch",
    "World",
    "collective_results",
    "check_collective_match",
    "reduce_values",
]
