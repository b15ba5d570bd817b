"""Small-step reduction rules, enabled-transition enumeration, deadlock and
termination predicates, and trace replay for the core calculus."""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

from .calculus import (
    SKIP,
    Add,
    Barrier,
    Command,
    Div,
    Eq,
    EvalError,
    Expr,
    GlobalState,
    If,
    IntLit,
    IRecv,
    ISend,
    Mul,
    Neg,
    ProcState,
    Seq,
    Set,
    Skip,
    TopologySpec,
    Var,
    Wait,
    While,
    eval_expr,
    head,
    replace_head,
)


class Rule(enum.Enum):
    # declaration order is the canonical transition order
    IF_TRUE = "IfTrue"
    IF_FALSE = "IfFalse"
    WHILE = "While"
    SET = "Set"
    SEQ_SKIP = "SeqSkip"
    SEND = "Send"
    RECV = "Recv"
    WAIT_RECV = "WaitRecv"
    WAIT_SEND = "WaitSend"
    TRANSFER_ON_WAIT = "TransferOnWait"
    TRANSFER_NO_WAIT = "TransferNoWait"
    FREE_BUFFER = "FreeBuffer"
    BARRIER = "Barrier"


_RULE_ORDER = {r: i for i, r in enumerate(Rule)}
LOCAL_RULES = frozenset({Rule.IF_TRUE, Rule.IF_FALSE, Rule.WHILE, Rule.SET, Rule.SEQ_SKIP})
ABBREV = {
    Rule.SEQ_SKIP: "SS",
    Rule.SEND: "S",
    Rule.RECV: "R",
    Rule.WAIT_RECV: "WR",
    Rule.WAIT_SEND: "WS",
    Rule.TRANSFER_ON_WAIT: "TOW",
    Rule.TRANSFER_NO_WAIT: "TNW",
    Rule.FREE_BUFFER: "FB",
}


class TransitionNotEnabled(Exception):
    pass


class ReplayError(Exception):
    def __init__(self, index: int, message: str):
        super().__init__(f"step {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class Transition:
    """A labelled reduction step.

    ``rank`` is the subject process for per-process rules and None for the
    buffer-only rules (TransferOnWait/NoWait, FreeBuffer) and Barrier, which
    are identified by their tag alone.
    """

    rule: Rule
    rank: int | None = None
    tag: int | None = None

    def sort_key(self) -> tuple[int, int, int]:
        return (
            _RULE_ORDER[self.rule],
            -1 if self.rank is None else self.rank,
            -1 if self.tag is None else self.tag,
        )

    def to_json(self) -> dict[str, Any]:
        return {"rule": self.rule.value, "rank": self.rank, "tag": self.tag}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Transition:
        return cls(Rule(obj["rule"]), obj.get("rank"), obj.get("tag"))

    def __str__(self) -> str:
        label = self.rule.value
        if self.rank is not None:
            label += f"@p{self.rank}"
        if self.tag is not None:
            label += f"({self.tag})"
        return label


# -- single-process rules ---------------------------------------------------


def _step_cmd(c: Command, env: dict[str, Any]) -> tuple[Command, dict[str, Any], Rule] | None:
    match c:
        case If(cond, then, else_):
            if eval_expr(cond, env) != 0:
                return then, env, Rule.IF_TRUE
            return else_, env, Rule.IF_FALSE
        case While(cond, body):
            return If(cond, Seq(body, c), SKIP), env, Rule.WHILE
        case Set(x, e):
            v = eval_expr(e, env)
            env2 = dict(env)
            env2[x] = v
            return SKIP, env2, Rule.SET
        case Seq(first, rest):
            if isinstance(first, Skip):
                return rest, env, Rule.SEQ_SKIP
            inner = _step_cmd(first, env)
            if inner is not None:
                return Seq(inner[0], rest), inner[1], inner[2]
    return None


def _try_step(c: Command, env: dict[str, Any]) -> tuple[Command, dict[str, Any], Rule] | None:
    """No local rule applies when an expression it needs cannot be evaluated."""
    try:
        return _step_cmd(c, env)
    except EvalError:
        return None


def local_rule(p: ProcState) -> tuple[ProcState, Rule] | None:
    r = _try_step(p.cmd, p.env)
    if r is None:
        return None
    cmd, env, rule = r
    return ProcState(cmd, env, p.last_tag, p.barriers_passed), rule


def local_step(p: ProcState) -> ProcState | None:
    """Apply the unique applicable local rule, or None when the head is a
    communication primitive, a barrier, or the process is a lone skip."""
    r = local_rule(p)
    return None if r is None else r[0]


# -- enabled transitions ----------------------------------------------------


def _sender_value(S: GlobalState, tag: int, spec: TopologySpec) -> tuple[bool, Any]:
    sender = spec.sender(tag, S.size)
    try:
        return True, eval_expr(Var(S.send_buf[tag]), S.procs[sender].env)
    except EvalError:
        return False, None


def enabled_transitions(S: GlobalState, spec: TopologySpec) -> list[Transition]:
    """Every transition whose premises hold in ``S``, in canonical order."""
    n = S.size
    out: list[Transition] = []
    all_barrier = True
    for i, p in enumerate(S.procs):
        h = head(p.cmd)
        if not isinstance(h, Barrier):
            all_barrier = False
        match h:
            case ISend(tag, _):
                out.append(Transition(Rule.SEND, i, eval_expr(tag, p.env)))
            case IRecv(tag, _):
                out.append(Transition(Rule.RECV, i, eval_expr(tag, p.env)))
            case Wait(tag):
                t = eval_expr(tag, p.env)
                if not isinstance(t, int):
                    raise EvalError(f"non-integer tag {t!r}")
                is_recv = spec.receiver(t, n) == i
                if is_recv and t in S.recv_buf and t in S.msg_buf:
                    out.append(Transition(Rule.WAIT_RECV, i, t))
                if t in S.msg_buf and spec.sender(t, n) == i:
                    out.append(Transition(Rule.WAIT_SEND, i, t))
                if is_recv and t in S.send_buf and _sender_value(S, t, spec)[0]:
                    out.append(Transition(Rule.TRANSFER_ON_WAIT, None, t))
            case Barrier():
                pass
            case _:
                r = _try_step(p.cmd, p.env)
                if r is not None:
                    out.append(Transition(r[2], i, None))
    for t in S.send_buf:
        i = spec.sender(t, n)
        if not isinstance(head(S.procs[i].cmd), (Wait, Barrier)) and _sender_value(S, t, spec)[0]:
            out.append(Transition(Rule.TRANSFER_NO_WAIT, None, t))
    for t in S.msg_buf:
        i, j = spec.sender(t, n), spec.receiver(t, n)
        if S.procs[i].last_tag >= t and S.procs[j].last_tag >= t:
            out.append(Transition(Rule.FREE_BUFFER, None, t))
    if all_barrier:
        out.append(Transition(Rule.BARRIER))
    # a TransferOnWait may coincide with nothing else for the same tag, but
    # keep the list duplicate-free regardless
    out = sorted(set(out), key=Transition.sort_key)
    return out


def _drop(m: dict, key: Any) -> dict:
    out = dict(m)
    del out[key]
    return out


def _with(m: dict, key: Any, value: Any) -> dict:
    out = dict(m)
    out[key] = value
    return out


def _apply(S: GlobalState, tr: Transition, spec: TopologySpec) -> GlobalState:
    """Successor of ``S`` under ``tr`` without checking enabledness."""
    rule = tr.rule
    if rule in LOCAL_RULES:
        p = S.procs[tr.rank]
        r = local_rule(p)
        if r is None or r[1] is not rule:
            raise TransitionNotEnabled(str(tr))
        return S.with_proc(tr.rank, r[0])
    if rule is Rule.BARRIER:
        procs = tuple(
            ProcState(replace_head(p.cmd, SKIP), p.env, p.last_tag, p.barriers_passed + 1)
            for p in S.procs
        )
        return GlobalState(procs, S.recv_buf, S.send_buf, S.msg_buf)
    t = tr.tag
    if rule in (Rule.TRANSFER_ON_WAIT, Rule.TRANSFER_NO_WAIT):
        ok, v = _sender_value(S, t, spec)
        if not ok:
            raise TransitionNotEnabled(str(tr))
        return GlobalState(S.procs, S.recv_buf, S.send_buf, _with(S.msg_buf, t, v))
    if rule is Rule.FREE_BUFFER:
        return GlobalState(S.procs, S.recv_buf, S.send_buf, _drop(S.msg_buf, t))
    p = S.procs[tr.rank]
    h = head(p.cmd)
    done = replace_head(p.cmd, SKIP)
    if rule is Rule.SEND:
        return GlobalState(
            S.with_proc(tr.rank, ProcState(done, p.env, p.last_tag, p.barriers_passed)).procs,
            S.recv_buf,
            _with(S.send_buf, t, h.src),
            S.msg_buf,
        )
    if rule is Rule.RECV:
        return GlobalState(
            S.with_proc(tr.rank, ProcState(done, p.env, p.last_tag, p.barriers_passed)).procs,
            _with(S.recv_buf, t, h.dst),
            S.send_buf,
            S.msg_buf,
        )
    if rule is Rule.WAIT_RECV:
        env = _with(p.env, S.recv_buf[t], S.msg_buf[t])
        return GlobalState(
            S.with_proc(tr.rank, ProcState(done, env, t, p.barriers_passed)).procs,
            _drop(S.recv_buf, t),
            S.send_buf,
            S.msg_buf,
        )
    if rule is Rule.WAIT_SEND:
        send_buf = _drop(S.send_buf, t) if t in S.send_buf else S.send_buf
        return GlobalState(
            S.with_proc(tr.rank, ProcState(done, p.env, t, p.barriers_passed)).procs,
            S.recv_buf,
            send_buf,
            S.msg_buf,
        )
    raise TransitionNotEnabled(str(tr))


def apply_transition(S: GlobalState, tr: Transition, spec: TopologySpec) -> GlobalState:
    if tr not in enabled_transitions(S, spec):
        raise TransitionNotEnabled(str(tr))
    return _apply(S, tr, spec)


# -- predicates -------------------------------------------------------------


def is_terminated(S: GlobalState) -> bool:
    return all(isinstance(p.cmd, Skip) for p in S.procs)


def _blocked_on_wait(S: GlobalState, i: int, p: ProcState, spec: TopologySpec) -> bool:
    h = head(p.cmd)
    try:
        t = eval_expr(h.tag, p.env)
    except EvalError:
        return False
    n = S.size
    on_send = spec.sender(t, n) == i and t not in S.msg_buf
    on_recv = spec.receiver(t, n) == i and t not in S.msg_buf and t not in S.send_buf
    return on_send or on_recv


def is_deadlock(S: GlobalState, spec: TopologySpec) -> bool:
    """Every process is blocked on a send, a receive, a barrier, or has
    terminated, but neither all terminated nor all at a barrier."""
    on_barrier = terminated = 0
    for i, p in enumerate(S.procs):
        if isinstance(p.cmd, Skip):
            terminated += 1
            continue
        h = head(p.cmd)
        if isinstance(h, Barrier):
            on_barrier += 1
        elif not (isinstance(h, Wait) and _blocked_on_wait(S, i, p, spec)):
            return False
    n = S.size
    return on_barrier != n and terminated != n


def progress_transitions(S: GlobalState, spec: TopologySpec) -> list[Transition]:
    """Enabled transitions other than FreeBuffer and self-loops."""
    out = []
    for tr in enabled_transitions(S, spec):
        if tr.rule is Rule.FREE_BUFFER:
            continue
        if tr.rule in (Rule.TRANSFER_NO_WAIT, Rule.TRANSFER_ON_WAIT) and tr.tag in S.msg_buf:
            if _sender_value(S, tr.tag, spec)[1] == S.msg_buf[tr.tag]:
                continue
        out.append(tr)
    return out


# -- traces -----------------------------------------------------------------


@dataclass
class Trace:
    """A schedule from ``initial``.  ``system`` (optional) replays steps for
    state machines other than the bare calculus, such as the runtime view."""

    initial: GlobalState
    steps: list[Transition] = field(default_factory=list)
    spec: TopologySpec | None = None
    system: Any = None

    def states(self) -> list[GlobalState]:
        if self.system is not None:
            return self.system.replay(self.steps)
        return replay(self.initial, self.steps, self.spec)

    def final(self) -> GlobalState:
        return self.states()[-1]

    def to_json(self) -> list[dict[str, Any]]:
        return [s.to_json() for s in self.steps]


def replay(initial: GlobalState, steps: Iterable[Transition], spec: TopologySpec) -> list[GlobalState]:
    """States visited by ``steps`` from ``initial``; raises ReplayError on the
    first transition that is not enabled."""
    states = [initial]
    S = initial
    for k, tr in enumerate(steps):
        try:
            enabled = enabled_transitions(S, spec)
        except EvalError as exc:
            raise ReplayError(k, f"evaluation failed: {exc}") from exc
        if tr not in enabled:
            raise ReplayError(k, f"{tr} is not enabled")
        S = _apply(S, tr, spec)
        states.append(S)
    return states


def trace_to_json(steps: Sequence[Transition]) -> str:
    return json.dumps([s.to_json() for s in steps])


def trace_from_json(text: str) -> list[Transition]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = data["steps"]
    return [Transition.from_json(obj) for obj in data]


# -- pretty printing --------------------------------------------------------


def format_expr(e: Expr) -> str:
    match e:
        case IntLit(n):
            return str(n)
        case Var(name):
            return name
        case Eq(a, b):
            return f"({format_expr(a)} = {format_expr(b)})"
        case Add(a, b):
            return f"({format_expr(a)} + {format_expr(b)})"
        case Mul(a, b):
            return f"({format_expr(a)} * {format_expr(b)})"
        case Div(a, b):
            return f"({format_expr(a)} div {format_expr(b)})"
        case Neg(a):
            return f"-{format_expr(a)}"
    return repr(e)


def format_cmd(c: Command, depth: int = 2) -> str:
    """Render a command; sequences are cut after ``depth`` elements."""
    match c:
        case Seq():
            parts = []
            while isinstance(c, Seq) and len(parts) < depth:
                parts.append(format_cmd(c.first, depth))
                c = c.rest
            if isinstance(c, Seq) or len(parts) >= depth:
                parts.append("..")
            else:
                parts.append(format_cmd(c, depth))
            return "; ".join(parts)
        case IRecv(tag, x):
            return f"irecv {format_expr(tag)} {x}"
        case ISend(tag, x):
            return f"isend {format_expr(tag)} {x}"
        case Wait(tag):
            return f"wait {format_expr(tag)}"
        case Barrier():
            return "barrier"
        case Skip():
            return "skip"
        case If(cond, a, b):
            return f"if {format_expr(cond)} {{{format_cmd(a, depth)}}} {{{format_cmd(b, depth)}}}"
        case While(cond, body):
            return f"while {format_expr(cond)} {{{format_cmd(body, depth)}}}"
        case Set(x, e):
            return f"set {x} {format_expr(e)}"
    return repr(c)


def _fmt_map(m: dict) -> str:
    if not m:
        return "{}"
    return "{" + ", ".join(f"{k}->{v}" for k, v in sorted(m.items())) + "}"


def format_state(S: GlobalState, title: str = "") -> str:
    """Box rendering of a global state, one line per component."""
    lines = []
    for i, p in enumerate(S.procs):
        env = {k: v for k, v in p.env.items() if k not in ("rank", "size")}
        lines.append(f"c{i} = {format_cmd(p.cmd)}")
        lines.append(f"  env{i} = {_fmt_map(env)}  t={p.last_tag} b={p.barriers_passed}")
    lines.append(f"Br = {_fmt_map(S.recv_buf)}")
    lines.append(f"Bs = {_fmt_map(S.send_buf)}")
    lines.append(f"Bm = {_fmt_map(S.msg_buf)}")
    width = max(len(s) for s in lines + [title])
    rule = "+" + "-" * (width + 2) + "+"
    out = [rule]
    if title:
        out.append(f"| {title.center(width)} |")
        out.append(rule)
    out.extend(f"| {s.ljust(width)} |" for s in lines)
    out.append(rule)
    return "\n".join(out)
