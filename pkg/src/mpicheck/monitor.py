"""Dynamic checks of the per-state axioms, plus two lemma assertions used by
the explorer as internal consistency checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

from .calculus import (
    Barrier,
    EvalError,
    GlobalState,
    IRecv,
    ISend,
    Seq,
    Set,
    Skip,
    TopologySpec,
    Var,
    Wait,
    eval_expr,
    expr_vars,
    head,
    read_exprs,
)

AXIOMS = ("AtStart", "AtSend", "AtRecv", "AtWait", "AtBarrier", "AtEnd", "AtSet", "AtRead")


@dataclass(frozen=True)
class Violation:
    axiom: str
    rank: int
    detail: dict[str, Any] = field(default_factory=dict)
    state_index: int = -1

    def to_json(self) -> dict[str, Any]:
        return {
            "axiom": self.axiom,
            "rank": self.rank,
            "detail": self.detail,
            "state_index": self.state_index,
        }

    def __str__(self) -> str:
        where = f" at state {self.state_index}" if self.state_index >= 0 else ""
        return f"{self.axiom}@p{self.rank}{where}: {self.detail}"


class LemmaFailure(AssertionError):
    """A lemma that must hold in violation-free states did not."""


def _skipped_tags(i: int, lo: int, hi: int, n: int, spec: TopologySpec) -> list[int]:
    """Tags strictly between ``lo`` and ``hi`` that rank ``i`` sends or receives."""
    return [
        v
        for v in range(max(lo + 1, 0), hi)
        if spec.sender(v, n) == i or spec.receiver(v, n) == i
    ]


def _check_proc(S: GlobalState, i: int, spec: TopologySpec) -> list[Violation]:
    p = S.procs[i]
    n = S.size
    out: list[Violation] = []

    def bad(axiom: str, **detail: Any) -> None:
        out.append(Violation(axiom, i, detail))

    if isinstance(p.cmd, Skip):
        count = spec.barrier_count(n)
        if p.barriers_passed != count:
            bad("AtEnd", clause="barrier_count", expected=count, actual=p.barriers_passed)
        return out

    h = head(p.cmd)

    # AtRead applies whatever the head is
    exprs = read_exprs(h)
    if exprs and S.recv_buf:
        used = frozenset().union(*(expr_vars(e) for e in exprs))
        for v, x in S.recv_buf.items():
            if x in used and spec.receiver(v, n) == i:
                bad("AtRead", tag=v, var=x)

    if isinstance(h, (ISend, IRecv, Wait)):
        try:
            v = eval_expr(h.tag, p.env)
        except EvalError:
            return out  # premise does not hold; semantics will report the error
    match h:
        case ISend(_, x):
            if spec.sender(v, n) != i:
                bad("AtSend", clause="sender", tag=v, expected=spec.sender(v, n), actual=i)
            try:
                payload = eval_expr(Var(x), p.env)
            except EvalError:
                bad("AtSend", clause="payload", tag=v, var=x, actual="unbound")
            else:
                expected = spec.message(v, n)
                if payload != expected:
                    bad("AtSend", clause="payload", tag=v, expected=str(expected), actual=str(payload))
            if v in S.send_buf:
                bad("AtSend", clause="duplicate", tag=v)
        case IRecv():
            if spec.receiver(v, n) != i:
                bad("AtRecv", clause="receiver", tag=v, expected=spec.receiver(v, n), actual=i)
            if v in S.recv_buf:
                bad("AtRecv", clause="duplicate", tag=v)
        case Wait():
            if not v > p.last_tag:
                bad("AtWait", clause="ordering", tag=v, last_tag=p.last_tag)
            skipped = _skipped_tags(i, p.last_tag, v, n, spec)
            if skipped:
                bad("AtWait", clause="skipped", tag=v, skipped=skipped[:8])
            b = p.barriers_passed
            try:
                lo, hi = spec.barrier_tag(b, n), spec.barrier_tag(b + 1, n)
            except Exception:
                lo = hi = None
            if lo is None or not lo <= v < hi:
                bad("AtWait", clause="interval", tag=v, barriers_passed=b, interval=[lo, hi])
            is_send = spec.sender(v, n) == i and v in S.send_buf
            is_recv = spec.receiver(v, n) == i and v in S.recv_buf
            if not (is_send or is_recv):
                bad("AtWait", clause="not_started", tag=v)
        case Barrier():
            b = p.barriers_passed
            count = spec.barrier_count(n)
            if b >= count:
                bad("AtBarrier", clause="count", barriers_passed=b, barrier_count=count)
            else:
                v = spec.barrier_tag(b + 1, n)
                if not v > p.last_tag:
                    bad("AtBarrier", clause="ordering", tag=v, last_tag=p.last_tag)
                skipped = _skipped_tags(i, p.last_tag, v, n, spec)
                if skipped:
                    bad("AtBarrier", clause="skipped", tag=v, skipped=skipped[:8])
            sends = sorted(t for t in S.send_buf if spec.sender(t, n) == i)
            if sends:
                bad("AtBarrier", clause="pending_send", tags=sends)
            recvs = sorted(t for t in S.recv_buf if spec.receiver(t, n) == i)
            if recvs:
                bad("AtBarrier", clause="pending_recv", tags=recvs)
        case Set(x, _):
            if x == "rank":
                bad("AtSet", clause="rank", var=x)
            for t, y in S.send_buf.items():
                if y == x and spec.sender(t, n) == i:
                    bad("AtSet", clause="pending_send", var=x, tag=t)
            for t, y in S.recv_buf.items():
                if y == x and spec.receiver(t, n) == i:
                    bad("AtSet", clause="pending_recv", var=x, tag=t)
    return out


def check_state(S: GlobalState, spec: TopologySpec, state_index: int = -1) -> list[Violation]:
    """All axiom violations whose premise holds in ``S``."""
    out: list[Violation] = []
    for i in range(S.size):
        out.extend(_check_proc(S, i, spec))
    if state_index >= 0:
        out = [replace(v, state_index=state_index) for v in out]
    return out


def check_changed(prev: GlobalState | None, S: GlobalState, spec: TopologySpec, state_index: int = -1) -> list[Violation]:
    """Like :func:`check_state`, given that ``prev`` was already checked.

    Clauses read a process's own state plus the send and receive buffers,
    so when those buffers are unchanged only the processes whose state
    object changed need looking at.
    """
    if (
        prev is None
        or prev.size != S.size
        or prev.send_buf != S.send_buf
        or prev.recv_buf != S.recv_buf
    ):
        return check_state(S, spec, state_index)
    out: list[Violation] = []
    for i in range(S.size):
        if S.procs[i] is not prev.procs[i]:
            out.extend(_check_proc(S, i, spec))
    if state_index >= 0:
        out = [replace(v, state_index=state_index) for v in out]
    return out


def check_initial(S: GlobalState) -> list[Violation]:
    """AtStart: fresh tags, zero barriers, empty buffers, rank/size bound."""
    out = []
    for i, p in enumerate(S.procs):
        if p.env.get("rank") != i or p.env.get("size") != S.size:
            out.append(Violation("AtStart", i, {"clause": "env"}))
        if p.last_tag != -1 or p.barriers_passed != 0:
            out.append(Violation("AtStart", i, {"clause": "counters"}))
    if S.recv_buf or S.send_buf or S.msg_buf:
        out.append(Violation("AtStart", 0, {"clause": "buffers"}))
    return out


def monitor_trace(trace) -> list[Violation]:
    """Replay ``trace`` and check every visited state."""
    from .semantics import replay

    out: list[Violation] = []
    for k, S in enumerate(replay(trace.initial, trace.steps, trace.spec)):
        out.extend(check_state(S, trace.spec, k))
    return out


def violations_to_jsonl(violations: list[Violation]) -> str:
    return "\n".join(json.dumps(v.to_json(), sort_keys=True) for v in violations)


# -- lemma assertions -------------------------------------------------------


def _ends_in_barrier(c) -> bool:
    while isinstance(c, Seq):
        if isinstance(c.first, Barrier) and isinstance(c.rest, Skip):
            return True
        c = c.rest
    return isinstance(c, Barrier)


def _blocked_tag(S: GlobalState, i: int, spec: TopologySpec) -> int | None:
    """The tag a process is blocked on per the OnSend/OnRecv predicates."""
    p = S.procs[i]
    h = head(p.cmd)
    if not isinstance(h, Wait):
        return None
    try:
        t = eval_expr(h.tag, p.env)
    except EvalError:
        return None
    n = S.size
    if spec.sender(t, n) == i and t not in S.msg_buf:
        return t
    if spec.receiver(t, n) == i and t not in S.msg_buf and t not in S.send_buf:
        return t
    return None


def check_lemmas(S: GlobalState, spec: TopologySpec) -> None:
    """Raise LemmaFailure if NumberOfBarriers or NoTwoTagsTheSame fails.

    Only meaningful in states without axiom violations.
    """
    n = S.size
    count = spec.barrier_count(n)
    for i, p in enumerate(S.procs):
        if _ends_in_barrier(p.cmd) and not p.barriers_passed < count:
            raise LemmaFailure(f"NumberOfBarriers: p{i} has b={p.barriers_passed}, count={count}")
    blocked: dict[int, int] = {}
    for i, p in enumerate(S.procs):
        if isinstance(p.cmd, Skip) or isinstance(head(p.cmd), Barrier):
            continue
        t = _blocked_tag(S, i, spec)
        if t is None:
            return  # not a deadlock candidate
        blocked[i] = t
    tags = list(blocked.values())
    if len(tags) != len(set(tags)):
        raise LemmaFailure(f"NoTwoTagsTheSame: blocked waits {blocked}")
