"""Simulated execution of rank programs under the calculus semantics.

Each rank's pending runtime operation is shown to the semantics as a single
calculus command (isend/irecv/wait/barrier, or skip once the program has
returned).  Array payloads are bound in the rank's environment as opaque
:class:`Payload` values, so the ordinary rules, the axiom monitor and the
deadlock predicate all apply unchanged.

A rank's behaviour is a function of the inputs it has received, so every
rank is modelled as a lazily built automaton whose nodes are identified by
``(operations completed, digest of inputs)``.  Successor nodes are memoised;
a generator only has to be replayed from scratch when a node is asked for a
successor under an input it has not seen before.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Generator
from dataclasses import dataclass, field
from typing import Any

from ..arrays import LockError, ReadWhileWriteLocked
from ..calculus import (
    BARRIER,
    SKIP,
    GlobalState,
    IntLit,
    IRecv,
    ISend,
    ProcState,
    Seq,
    TopologySpec,
    Wait,
)
from ..monitor import Violation
from ..explorer import SystemViolation
from ..semantics import Rule, Transition, _apply, enabled_transitions
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

RankProgram = Callable[[World], Generator[Any, Any, Any]]


@dataclass
class _Finished:
    value: Any


@dataclass
class _Node:
    pc: int
    hist: str
    op: Any  # an Op, or _Finished
    inputs: tuple
    live: Generator | None = None
    children: dict[bytes, _Node] = field(default_factory=dict)


def _input_key(x: Any) -> bytes:
    if x is None:
        return b"N"
    canon = getattr(x, "canonical_bytes", None)
    if canon is not None:
        return b"P" + canon()
    if isinstance(x, float):
        return b"F" + x.hex().encode()
    return b"R" + repr(x).encode()


def _violation_of(exc: Exception, rank: int) -> Violation:
    if isinstance(exc, PreconditionViolation):
        return Violation(exc.axiom, rank, {"clause": exc.clause, "tag": exc.tag, "message": exc.detail})
    axiom = "AtRead" if isinstance(exc, ReadWhileWriteLocked) else "AtSet"
    return Violation(axiom, rank, {"clause": "buffer_lock", "message": str(exc)})


class RankAutomaton:
    def __init__(self, program: RankProgram, rank: int, n: int, spec: TopologySpec, checked: bool):
        self.program = program
        self.rank = rank
        self.n = n
        self.spec = spec
        self.checked = checked
        self.nodes: dict[tuple[int, str], _Node] = {}
        self.replays = 0

    def _fresh(self) -> Generator:
        return self.program(World(self.rank, self.n, self.spec, self.checked))

    def _step(self, gen: Generator, value: Any, first: bool) -> Any:
        try:
            return gen.send(None) if first else gen.send(value)
        except StopIteration as stop:
            return _Finished(stop.value)
        except (PreconditionViolation, LockError) as exc:
            raise SystemViolation(_violation_of(exc, self.rank)) from exc

    def _intern(self, node: _Node) -> _Node:
        key = (node.pc, node.hist)
        old = self.nodes.get(key)
        if old is not None:
            return old
        self.nodes[key] = node
        return node

    def start(self) -> _Node:
        key = (0, "")
        if key in self.nodes:
            return self.nodes[key]
        gen = self._fresh()
        op = self._step(gen, None, first=True)
        return self._intern(_Node(0, "", op, (), gen))

    def node(self, pc: int, hist: str) -> _Node:
        return self.nodes[(pc, hist)]

    def advance(self, node: _Node, value: Any) -> _Node:
        k = _input_key(value)
        child = node.children.get(k)
        if child is not None:
            return child
        gen, node.live = node.live, None
        if gen is None:
            self.replays += 1
            gen = self._fresh()
            self._step(gen, None, first=True)
            for x in node.inputs:
                self._step(gen, x, first=False)
        op = self._step(gen, value, first=False)
        hist = hashlib.blake2b((node.hist + k.hex()).encode(), digest_size=16).hexdigest()
        child = self._intern(_Node(node.pc + 1, hist, op, node.inputs + (value,), gen))
        node.children[k] = child
        return child


def _op_cmd(op: Any):
    match op:
        case OpISend(tag, _):
            return ISend(IntLit(tag), f"s{tag}")
        case OpIRecv(tag):
            return IRecv(IntLit(tag), f"r{tag}")
        case OpWait(tag, _):
            return Wait(IntLit(tag))
        case OpCollective():
            return BARRIER
    return SKIP


class RuntimeSystem:
    """Rank programs over :class:`World`, explorable like a calculus program."""

    def __init__(self, program: RankProgram, spec: TopologySpec, n: int, checked: bool = True):
        self.spec = spec
        self.n = n
        self.automata = [RankAutomaton(program, r, n, spec, checked) for r in range(n)]
        self._initial: GlobalState | None = None

    def _env(self, rank: int, node: _Node, old: dict | None) -> dict:
        env = {"rank": rank, "size": self.n, "__pc": node.pc, "__hist": node.hist}
        if old:
            for k, v in old.items():
                if k[0] == "s" and k[1:].isdigit():
                    env[k] = v
        if isinstance(node.op, OpISend):
            env[f"s{node.op.tag}"] = node.op.payload
        return env

    def initial(self) -> GlobalState:
        if self._initial is None:
            procs = []
            for r, a in enumerate(self.automata):
                node = a.start()
                procs.append(ProcState(_op_cmd(node.op), self._env(r, node, None)))
            self._initial = GlobalState(tuple(procs), {}, {}, {})
        return self._initial

    def node_of(self, S: GlobalState, rank: int) -> _Node:
        env = S.procs[rank].env
        return self.automata[rank].node(env["__pc"], env["__hist"])

    def result(self, S: GlobalState, rank: int) -> Any:
        node = self.node_of(S, rank)
        return node.op.value if isinstance(node.op, _Finished) else None

    def enabled(self, S: GlobalState) -> list[Transition]:
        return enabled_transitions(S, self.spec)

    def _advance(self, S: GlobalState, rank: int, value: Any, drop: str | None = None) -> GlobalState:
        p = S.procs[rank]
        node = self.automata[rank].advance(self.node_of(S, rank), value)
        old = dict(p.env)
        if drop is not None:
            old.pop(drop, None)
        # the finished operation leaves a skip in front of the next one, as a
        # completed calculus command would
        cmd = Seq(SKIP, _op_cmd(node.op))
        proc = ProcState(cmd, self._env(rank, node, old), p.last_tag, p.barriers_passed)
        return S.with_proc(rank, proc)

    def apply(self, S: GlobalState, tr: Transition) -> GlobalState:
        rule = tr.rule
        if rule is Rule.BARRIER:
            return self._barrier(S)
        S1 = _apply(S, tr, self.spec)
        if rule in (Rule.SEND, Rule.RECV):
            return self._advance(S1, tr.rank, None)
        if rule is Rule.WAIT_SEND:
            return self._advance(S1, tr.rank, None, drop=f"s{tr.tag}")
        if rule is Rule.WAIT_RECV:
            env = dict(S1.procs[tr.rank].env)
            payload = env.pop(f"r{tr.tag}")
            p = S1.procs[tr.rank]
            S1 = S1.with_proc(tr.rank, ProcState(p.cmd, env, p.last_tag, p.barriers_passed))
            return self._advance(S1, tr.rank, payload)
        return S1

    def _barrier(self, S: GlobalState) -> GlobalState:
        ops = [self.node_of(S, r).op for r in range(self.n)]
        index = S.procs[0].barriers_passed
        problem = check_collective_match(ops, self.spec, index, self.n)
        if problem is not None:
            raise SystemViolation(Violation("AtBarrier", 0, {"clause": "collective_mismatch", "message": problem}))
        results = collective_results(ops)
        S1 = _apply(S, Transition(Rule.BARRIER), self.spec)
        for r in range(self.n):
            S1 = self._advance(S1, r, results[r])
        return S1

    def replay(self, steps) -> list[GlobalState]:
        from ..semantics import ReplayError

        S = self.initial()
        out = [S]
        for k, tr in enumerate(steps):
            if tr not in self.enabled(S):
                raise ReplayError(k, f"{tr} is not enabled")
            S = self.apply(S, tr)
            out.append(S)
        return out
