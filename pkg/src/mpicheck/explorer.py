"""Exhaustive depth-first and seeded random exploration of reachable states."""

from __future__ import annotations

import enum
import hashlib
import random
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from typing import Any

from .calculus import Barrier, Command, GlobalState, TopologySpec, Wait, head, initial_state
from .monitor import LemmaFailure, Violation, check_changed, check_lemmas, check_state
from .semantics import (
    LOCAL_RULES,
    ReplayError,
    Rule,
    Trace,
    Transition,
    _apply,
    _sender_value,
    enabled_transitions,
    is_deadlock,
    is_terminated,
    local_rule,
)

DEFAULT_MAX_STATES = 5_000_000
LOCAL_CHAIN_LIMIT = 100_000


class FreeBufferPolicy(enum.Enum):
    EAGER = "eager"
    NEVER = "never"
    EXPLORE = "explore"


@dataclass(frozen=True)
class ExploreBounds:
    max_states: int = DEFAULT_MAX_STATES
    max_depth: int = 1_000_000
    free_buffer_policy: FreeBufferPolicy = FreeBufferPolicy.EAGER
    compress_local: bool = True
    # take enabled posts (isend/irecv) first, one process at a time; only
    # used while the monitor is on
    reduce_posts: bool = False

    def __post_init__(self) -> None:
        if self.max_states <= 0 or self.max_depth <= 0:
            raise ValueError("max_states and max_depth must be positive")


class SystemViolation(Exception):
    """Raised by a system's ``apply`` or ``initial`` when a step breaks a rule
    that the system checks itself (e.g. a runtime-API precondition)."""

    def __init__(self, violation: Violation):
        super().__init__(str(violation))
        self.violation = violation


# -- canonical hashing ------------------------------------------------------


def _value_bytes(v: Any) -> bytes:
    canon = getattr(v, "canonical_bytes", None)
    if canon is not None:
        return b"P" + canon()
    if isinstance(v, int):
        return b"I" + str(v).encode()
    return b"R" + repr(v).encode()


def _proc_digest(p) -> bytes:
    d = getattr(p, "_digest", None)
    if d is None:
        from .calculus import node_digest

        h = hashlib.blake2b(digest_size=16)
        h.update(node_digest(p.cmd))
        for k in sorted(p.env):
            h.update(k.encode())
            h.update(b"=")
            h.update(_value_bytes(p.env[k]))
            h.update(b";")
        h.update(f"|{p.last_tag}|{p.barriers_passed}".encode())
        d = h.digest()
        object.__setattr__(p, "_digest", d)  # states are immutable, so cache
    return d


def canonical_hash(S: GlobalState) -> bytes:
    """128-bit digest of a global state; maps are hashed in sorted key order."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(len(S.procs)).encode())
    for p in S.procs:
        h.update(b"\x00")
        h.update(_proc_digest(p))
    for name, buf in ((b"r", S.recv_buf), (b"s", S.send_buf)):
        h.update(name)
        for t in sorted(buf):
            h.update(f"{t}:{buf[t]};".encode())
    h.update(b"m")
    for t in sorted(S.msg_buf):
        h.update(f"{t}:".encode())
        h.update(_value_bytes(S.msg_buf[t]))
        h.update(b";")
    return h.digest()


# -- systems ----------------------------------------------------------------


class CalculusSystem:
    """The bare calculus: a program run by ``n`` processes under ``spec``."""

    def __init__(self, program: Command, spec: TopologySpec, n: int):
        self.program = program
        self.spec = spec
        self.n = n
        self._initial = initial_state(program, n)

    def initial(self) -> GlobalState:
        return self._initial

    def enabled(self, S: GlobalState) -> list[Transition]:
        return enabled_transitions(S, self.spec)

    def apply(self, S: GlobalState, tr: Transition) -> GlobalState:
        return _apply(S, tr, self.spec)

    def replay(self, steps) -> list[GlobalState]:
        from .semantics import replay

        return replay(self._initial, steps, self.spec)


def _is_self_loop(system, S: GlobalState, tr: Transition) -> bool:
    if tr.rule not in (Rule.TRANSFER_NO_WAIT, Rule.TRANSFER_ON_WAIT) or tr.tag not in S.msg_buf:
        return False
    ok, v = _sender_value(S, tr.tag, system.spec)
    return ok and v == S.msg_buf[tr.tag]


def progress(system, S: GlobalState, enabled: list[Transition]) -> list[Transition]:
    return [
        tr
        for tr in enabled
        if tr.rule is not Rule.FREE_BUFFER and not _is_self_loop(system, S, tr)
    ]


def _free_all(system, S: GlobalState) -> tuple[GlobalState, list[Transition]]:
    done: list[Transition] = []
    while True:
        frees = [tr for tr in system.enabled(S) if tr.rule is Rule.FREE_BUFFER]
        if not frees:
            return S, done
        for tr in frees:
            S = system.apply(S, tr)
            done.append(tr)


@dataclass
class _Step:
    steps: list[Transition]
    mids: list[GlobalState]  # states strictly inside a compressed chain
    target: GlobalState | None
    error: SystemViolation | None = None


def _run_chain(S: GlobalState, rank: int, steps: list[Transition], mids: list[GlobalState]) -> GlobalState:
    """Apply ``rank``'s local rules until its head is not local."""
    while len(steps) < LOCAL_CHAIN_LIMIT:
        r = local_rule(S.procs[rank])
        if r is None:
            break
        mids.append(S)
        S = S.with_proc(rank, r[0])
        steps.append(Transition(r[1], rank))
    return S


def _untransferred_sends(S: GlobalState, rank: int, spec: TopologySpec) -> bool:
    n = S.size
    return any(spec.sender(t, n) == rank and t not in S.msg_buf for t in S.send_buf)


def _settle(system, S: GlobalState, rank: int, steps: list[Transition], mids: list[GlobalState]) -> GlobalState:
    """Run ``rank``'s local chain after one of its communication steps.

    The state right after the step is skipped, which is only safe if every
    transition enabled there is still enabled at the end of the chain.  The
    one exception is an eager transfer of the process's own pending send,
    which stops being enabled once the process reaches a wait or a barrier;
    in that case the chain is left for the search to take separately.
    """
    if not _untransferred_sends(S, rank, system.spec):
        return _run_chain(S, rank, steps, mids)
    trial_steps: list[Transition] = []
    trial_mids: list[GlobalState] = []
    end = _run_chain(S, rank, trial_steps, trial_mids)
    if isinstance(head(end.procs[rank].cmd), (Wait, Barrier)):
        return S
    steps.extend(trial_steps)
    mids.extend(trial_mids)
    return end


def _first_post(enabled: list[Transition]) -> list[Transition] | None:
    """The enabled post of the lowest rank, as a one-element list.

    A post only adds an entry for a tag its own process owns, nothing any
    other process does can disable it, and it disables nothing, so it can be
    moved in front of any interleaving.  Monitor clauses only look at
    buffer entries of tags the checked process owns, so the states skipped
    this way have the same violations as the ones kept.  Both arguments need
    the current state to be free of violations (no foreign or duplicate
    tags); the caller guarantees that by running the monitor first.
    """
    posts = [tr for tr in enabled if tr.rule in (Rule.SEND, Rule.RECV)]
    if not posts:
        return None
    return [min(posts, key=lambda tr: (tr.rank, tr.sort_key()))]


def _expand(system, S: GlobalState, enabled: list[Transition], bounds: ExploreBounds) -> list[_Step]:
    """Successors of ``S``, one per enabled transition.

    With local compression on, a process that has just moved keeps running
    its local rules (assignments, branches, loop unfolding, sequencing):
    those touch nothing another process can observe, so their interleavings
    with the rest of the system all lead to the same states.
    """
    policy = bounds.free_buffer_policy
    out: list[_Step] = []
    for tr in enabled:
        if tr.rule is Rule.FREE_BUFFER and policy is not FreeBufferPolicy.EXPLORE:
            continue
        if _is_self_loop(system, S, tr):
            continue
        try:
            S1 = system.apply(S, tr)
        except SystemViolation as exc:
            out.append(_Step([tr], [], None, exc))
            continue
        steps = [tr]
        mids: list[GlobalState] = []
        if bounds.compress_local:
            if tr.rule in LOCAL_RULES:
                S1 = _run_chain(S1, tr.rank, steps, mids)
            elif tr.rank is not None:
                S1 = _settle(system, S1, tr.rank, steps, mids)
            elif tr.rule is Rule.BARRIER:
                for r in range(S1.size):
                    S1 = _settle(system, S1, r, steps, mids)
        if policy is FreeBufferPolicy.EAGER and S1.msg_buf:
            S1, freed = _free_all(system, S1)
            steps.extend(freed)
        out.append(_Step(steps, mids, S1))
    return out


# -- verdicts ---------------------------------------------------------------


@dataclass
class Ok:
    states_visited: int
    terminal_states: int
    terminal_digests: list[str] = field(default_factory=list)
    terminals: list[GlobalState] = field(default_factory=list, repr=False)
    kind: str = "ok"

    def to_json(self) -> dict[str, Any]:
        return {
            "verdict": "Ok",
            "states_visited": self.states_visited,
            "terminal_states": self.terminal_states,
            "terminal_digests": self.terminal_digests,
        }


@dataclass
class DeadlockFound:
    trace: Trace
    states_visited: int = 0
    strict: bool = True  # False: stuck, but not a deadlock in the Table-2 sense
    kind: str = "deadlock"

    def to_json(self) -> dict[str, Any]:
        return {
            "verdict": "DeadlockFound",
            "states_visited": self.states_visited,
            "strict": self.strict,
            "trace": self.trace.to_json(),
        }


@dataclass
class ViolationFound:
    trace: Trace
    violations: list[Violation]
    states_visited: int = 0
    kind: str = "violation"

    def to_json(self) -> dict[str, Any]:
        return {
            "verdict": "ViolationFound",
            "states_visited": self.states_visited,
            "violations": [v.to_json() for v in self.violations],
            "trace": self.trace.to_json(),
        }


@dataclass
class BoundExceeded:
    states_visited: int
    reason: str = "max_states"
    kind: str = "bound"

    def to_json(self) -> dict[str, Any]:
        return {"verdict": "BoundExceeded", "states_visited": self.states_visited, "reason": self.reason}


Verdict = Ok | DeadlockFound | ViolationFound | BoundExceeded


# -- state graph ------------------------------------------------------------


@dataclass
class StateGraph:
    states: dict[bytes, GlobalState] = field(default_factory=dict)
    edges: list[tuple[bytes, bytes, tuple[Transition, ...]]] = field(default_factory=list)
    root: bytes | None = None

    def to_dot(self) -> str:
        ids = {d: f"s{k}" for k, d in enumerate(self.states)}
        lines = ["digraph states {", "  node [shape=box, fontname=monospace];"]
        for d, name in ids.items():
            S = self.states[d]
            label = d.hex()[:8]
            if is_terminated(S):
                lines.append(f'  {name} [label="{label}", peripheries=2];')
            else:
                lines.append(f'  {name} [label="{label}"];')
        for a, b, steps in self.edges:
            label = " ".join(str(s) for s in steps)
            lines.append(f'  {ids[a]} -> {ids[b]} [label="{label}"];')
        lines.append("}")
        return "\n".join(lines)


# -- exhaustive exploration -------------------------------------------------


def _path(parents: dict, d: bytes) -> list[Transition]:
    chunks = []
    while True:
        parent, steps = parents[d]
        if parent is None:
            break
        chunks.append(steps)
        d = parent
    out: list[Transition] = []
    for steps in reversed(chunks):
        out.extend(steps)
    return out


def explore_system(
    system,
    bounds: ExploreBounds | None = None,
    monitor: bool = True,
    graph: StateGraph | None = None,
) -> Verdict:
    """Depth-first search over the states reachable in ``system``."""
    bounds = bounds or ExploreBounds()
    try:
        S0 = system.initial()
    except SystemViolation as exc:
        return ViolationFound(Trace(None, [], system.spec, system), [exc.violation], 0)
    d0 = canonical_hash(S0)
    parents: dict[bytes, tuple[bytes | None, tuple[Transition, ...]]] = {d0: (None, ())}
    depth: dict[bytes, int] = {d0: 0}
    terminal_digests: list[bytes] = []
    terminals: list[GlobalState] = []
    truncated = False
    if graph is not None:
        graph.root = d0
        graph.states[d0] = S0

    def mk_trace(steps: list[Transition]) -> Trace:
        return Trace(S0, steps, system.spec, None if isinstance(system, CalculusSystem) else system)

    def visit(S: GlobalState, d: bytes, enabled: list[Transition], prev: GlobalState | None = None) -> Verdict | None:
        nonlocal truncated
        if monitor:
            vs = check_changed(prev, S, system.spec, depth[d])
            if vs:
                return ViolationFound(mk_trace(_path(parents, d)), vs, len(parents))
            check_lemmas(S, system.spec)
        term = is_terminated(S)
        if term:
            terminal_digests.append(d)
            terminals.append(S)
            return None
        prog = progress(system, S, enabled)
        dl = is_deadlock(S, system.spec)
        if monitor and dl != (not prog):
            raise LemmaFailure(f"deadlock cross-check failed in state {d.hex()}")
        if dl or not prog:
            return DeadlockFound(mk_trace(_path(parents, d)), len(parents), strict=dl)
        return None

    enabled0 = system.enabled(S0)
    found = visit(S0, d0, enabled0)
    if found is not None:
        return found
    stack: list[tuple[GlobalState, bytes, list[Transition]]] = [(S0, d0, enabled0)]
    while stack:
        S, d, enabled = stack.pop()
        if depth[d] >= bounds.max_depth:
            truncated = True
            continue
        if monitor and bounds.reduce_posts:
            enabled = _first_post(enabled) or enabled
        for step in _expand(system, S, enabled, bounds):
            prev = S
            if monitor and step.mids:
                base = _path(parents, d)
                for k, M in enumerate(step.mids):
                    vs = check_changed(prev, M, system.spec, depth[d] + k + 1)
                    if vs:
                        return ViolationFound(mk_trace(base + step.steps[: k + 1]), vs, len(parents))
                    prev = M
            if step.error is not None:
                v = replace(step.error.violation, state_index=depth[d])
                return ViolationFound(mk_trace(_path(parents, d) + step.steps), [v], len(parents))
            T = step.target
            dt = canonical_hash(T)
            if graph is not None:
                graph.edges.append((d, dt, tuple(step.steps)))
            if dt in parents:
                continue
            if len(parents) >= bounds.max_states:
                return BoundExceeded(len(parents), "max_states")
            parents[dt] = (d, tuple(step.steps))
            depth[dt] = depth[d] + len(step.steps)
            if graph is not None:
                graph.states[dt] = T
            en = system.enabled(T)
            found = visit(T, dt, en, prev)
            if found is not None:
                return found
            stack.append((T, dt, en))
    if truncated:
        return BoundExceeded(len(parents), "max_depth")
    uniq = sorted({t.hex() for t in terminal_digests})
    return Ok(len(parents), len(terminal_digests), uniq, terminals)


def explore(
    program: Command,
    spec: TopologySpec,
    n: int,
    bounds: ExploreBounds | None = None,
    monitor: bool = True,
    graph: StateGraph | None = None,
) -> Verdict:
    return explore_system(CalculusSystem(program, spec, n), bounds, monitor, graph)


# -- random schedules -------------------------------------------------------


def run_system_schedule(
    system,
    seed: int,
    monitor: bool = True,
    bounds: ExploreBounds | None = None,
    on_state: Callable[[GlobalState], None] | None = None,
) -> tuple[Trace, Verdict]:
    """Follow one uniformly random enabled transition at a time."""
    bounds = bounds or ExploreBounds()
    rng = random.Random(seed)
    try:
        S0 = S = system.initial()
    except SystemViolation as exc:
        trace = Trace(None, [], system.spec, system)
        return trace, ViolationFound(trace, [exc.violation], 0)
    steps: list[Transition] = []
    trace = Trace(S0, steps, system.spec, None if isinstance(system, CalculusSystem) else system)
    count = 1
    while True:
        if on_state is not None:
            on_state(S)
        if monitor:
            vs = check_state(S, system.spec, len(steps))
            if vs:
                return trace, ViolationFound(trace, vs, count)
        if is_terminated(S):
            return trace, Ok(count, 1, [canonical_hash(S).hex()], [S])
        enabled = system.enabled(S)
        cands = progress(system, S, enabled)
        if bounds.free_buffer_policy is FreeBufferPolicy.EXPLORE:
            cands += [tr for tr in enabled if tr.rule is Rule.FREE_BUFFER]
        if not cands:
            return trace, DeadlockFound(trace, count, strict=is_deadlock(S, system.spec))
        if len(steps) >= bounds.max_depth:
            return trace, BoundExceeded(count, "max_depth")
        tr = cands[rng.randrange(len(cands))]
        steps.append(tr)
        try:
            S = system.apply(S, tr)
        except SystemViolation as exc:
            v = replace(exc.violation, state_index=len(steps) - 1)
            return trace, ViolationFound(trace, [v], count)
        count += 1
        if bounds.free_buffer_policy is FreeBufferPolicy.EAGER and S.msg_buf:
            S, freed = _free_all(system, S)
            steps.extend(freed)


def run_schedule(
    program: Command,
    spec: TopologySpec,
    n: int,
    seed: int,
    monitor: bool = True,
    bounds: ExploreBounds | None = None,
) -> tuple[Trace, Verdict]:
    return run_system_schedule(CalculusSystem(program, spec, n), seed, monitor, bounds)


__all__ = [
    "BoundExceeded",
    "CalculusSystem",
    "DeadlockFound",
    "ExploreBounds",
    "FreeBufferPolicy",
    "Ok",
    "ReplayError",
    "StateGraph",
    "SystemViolation",
    "Verdict",
    "ViolationFound",
    "canonical_hash",
    "explore",
    "explore_system",
    "run_schedule",
    "run_system_schedule",
]
