"""Abstract syntax, machine states and topology specifications of the core
message-passing calculus.

Expressions and commands are immutable trees.  Every node lazily caches a
128-bit structural digest, which the explorer uses for state deduplication
and which also backs ``__hash__`` so that large shared continuations are not
re-hashed on every lookup.
"""

from __future__ import annotations

import enum
import hashlib
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, fields
from typing import Any, Union

TAG_GAP_LIMIT = 32767


class EvalError(Exception):
    """Expression evaluation failed; the program is ill-formed."""


class UnboundVariable(EvalError):
    pass


class DivisionByZero(EvalError):
    pass


_FIELD_NAMES: dict[type, tuple[str, ...]] = {}


def node_digest(node: Any) -> bytes:
    """Structural 128-bit digest of an AST node, cached on the node."""
    cached = node.__dict__.get("_digest")
    if cached is not None:
        return cached
    cls = type(node)
    names = _FIELD_NAMES.get(cls)
    if names is None:
        names = _FIELD_NAMES[cls] = tuple(f.name for f in fields(cls))
    h = hashlib.blake2b(cls.__name__.encode(), digest_size=16)
    for name in names:
        value = getattr(node, name)
        if isinstance(value, _Node):
            h.update(b"\x01")
            h.update(node_digest(value))
        else:
            h.update(b"\x02")
            h.update(repr(value).encode())
    digest = h.digest()
    object.__setattr__(node, "_digest", digest)
    return digest


class _Node:
    pass


def _node(cls):
    cls = dataclass(frozen=True)(cls)
    cls.__hash__ = lambda self: hash(node_digest(self))
    return cls


# -- expressions ------------------------------------------------------------


@_node
class IntLit(_Node):
    n: int


@_node
class Var(_Node):
    name: str


@_node
class Eq(_Node):
    lhs: Expr
    rhs: Expr


@_node
class Add(_Node):
    lhs: Expr
    rhs: Expr


@_node
class Neg(_Node):
    e: Expr


@_node
class Mul(_Node):
    lhs: Expr
    rhs: Expr


@_node
class Div(_Node):
    lhs: Expr
    rhs: Expr


Expr = Union[IntLit, Var, Eq, Add, Neg, Mul, Div]


def int_div(a: int, b: int) -> int:
    """Euclidean division (remainder always non-negative)."""
    if b == 0:
        raise DivisionByZero(f"{a} div 0")
    q = a // abs(b)
    return -q if b < 0 else q


def eval_expr(e: Expr, env: Mapping[str, Any]) -> Any:
    """Big-step evaluation of ``e`` in ``env``.

    Variables may be bound to opaque payload values (the runtime view binds
    array payloads); arithmetic on those is an error, equality is not.
    """
    match e:
        case IntLit(n):
            return n
        case Var(name):
            try:
                return env[name]
            except KeyError:
                raise UnboundVariable(name) from None
        case Eq(lhs, rhs):
            return 1 if eval_expr(lhs, env) == eval_expr(rhs, env) else 0
        case Add(lhs, rhs):
            return _arith(eval_expr(lhs, env), eval_expr(rhs, env), "+")
        case Mul(lhs, rhs):
            return _arith(eval_expr(lhs, env), eval_expr(rhs, env), "*")
        case Div(lhs, rhs):
            return _arith(eval_expr(lhs, env), eval_expr(rhs, env), "div")
        case Neg(inner):
            v = eval_expr(inner, env)
            if not isinstance(v, int):
                raise EvalError(f"negation of non-integer {v!r}")
            return -v
    raise EvalError(f"not an expression: {e!r}")


def _arith(a: Any, b: Any, op: str) -> int:
    if not isinstance(a, int) or not isinstance(b, int):
        raise EvalError(f"arithmetic {op} on non-integers {a!r}, {b!r}")
    if op == "+":
        return a + b
    if op == "*":
        return a * b
    return int_div(a, b)


def expr_vars(e: Expr) -> frozenset[str]:
    match e:
        case Var(name):
            return frozenset((name,))
        case IntLit():
            return frozenset()
        case Neg(inner):
            return expr_vars(inner)
        case _:
            return expr_vars(e.lhs) | expr_vars(e.rhs)


# -- commands ---------------------------------------------------------------


@_node
class IRecv(_Node):
    tag: Expr
    dst: str


@_node
class ISend(_Node):
    tag: Expr
    src: str


@_node
class Wait(_Node):
    tag: Expr


@_node
class Barrier(_Node):
    pass


@_node
class Skip(_Node):
    pass


@_node
class If(_Node):
    cond: Expr
    then: Command
    else_: Command


@_node
class While(_Node):
    cond: Expr
    body: Command


@_node
class Set(_Node):
    x: str
    e: Expr


@_node
class Seq(_Node):
    first: Command
    rest: Command


Command = Union[IRecv, ISend, Wait, Barrier, Skip, If, While, Set, Seq]

SKIP = Skip()
BARRIER = Barrier()


def seq(*cmds: Command) -> Command:
    """Right-nested sequence; ``seq()`` is ``skip``."""
    if not cmds:
        return SKIP
    out = cmds[-1]
    for c in reversed(cmds[:-1]):
        out = Seq(c, out)
    return out


def head(c: Command) -> Command:
    """The command at the front of the Seq spine."""
    while isinstance(c, Seq):
        c = c.first
    return c


def replace_head(c: Command, new: Command) -> Command:
    if isinstance(c, Seq):
        return Seq(replace_head(c.first, new), c.rest)
    return new


def read_exprs(c: Command) -> tuple[Expr, ...]:
    """Expression positions of a (head) command."""
    match c:
        case IRecv(tag, _) | ISend(tag, _) | Wait(tag):
            return (tag,)
        case Set(_, e):
            return (e,)
        case If(cond, _, _) | While(cond, _):
            return (cond,)
    return ()


# -- machine states ---------------------------------------------------------


@dataclass(frozen=True)
class ProcState:
    """One process: command, environment, last waited tag, barriers passed."""

    cmd: Command
    env: Mapping[str, Any]
    last_tag: int = -1
    barriers_passed: int = 0

    @property
    def rank(self) -> int:
        return self.env["rank"]

    @property
    def terminated(self) -> bool:
        return isinstance(self.cmd, Skip)


@dataclass(frozen=True)
class GlobalState:
    procs: tuple[ProcState, ...]
    recv_buf: Mapping[int, str] = field(default_factory=dict)
    send_buf: Mapping[int, str] = field(default_factory=dict)
    msg_buf: Mapping[int, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.procs)

    def with_proc(self, rank: int, proc: ProcState) -> GlobalState:
        procs = list(self.procs)
        procs[rank] = proc
        return GlobalState(tuple(procs), self.recv_buf, self.send_buf, self.msg_buf)


def initial_state(program: Command, n: int) -> GlobalState:
    """Every rank runs ``program; barrier`` from ``{rank, size}``.

    The appended barrier is ``Seq(Barrier, Skip)`` so the ordinary Barrier rule
    also covers the final one.
    """
    if n < 2:
        raise ValueError(f"at least two processes are required, got {n}")
    cmd = Seq(program, Seq(BARRIER, SKIP))
    procs = tuple(ProcState(cmd, {"rank": i, "size": n}) for i in range(n))
    return GlobalState(procs, {}, {}, {})


# -- topology specification -------------------------------------------------


class ReduceOp(enum.Enum):
    SUM = "sum"
    MIN = "min"
    MAX = "max"
    LAND = "land"


@dataclass(frozen=True)
class PlainBarrier:
    pass


@dataclass(frozen=True)
class Gather:
    root: int
    segment_len: Callable[[int, int], int]
    expected_segment: Callable[[int, int], Any] | None = None


@dataclass(frozen=True)
class AllReduce:
    op: ReduceOp
    expected_contribution: Callable[[int, int], float] | None = None


CollectiveSpec = Union[PlainBarrier, Gather, AllReduce]


@dataclass(frozen=True)
class TopologySpec:
    """The user-supplied communication pattern.

    ``collectives`` maps a collective index (the number of barriers already
    passed when it is called) to its description; missing indices are plain
    barriers.  A callable may be given instead of a mapping.
    """

    sender: Callable[[int, int], int]
    receiver: Callable[[int, int], int]
    message: Callable[[int, int], Any]
    barrier_tag: Callable[[int, int], int]
    barrier_count: Callable[[int], int]
    collectives: Mapping[int, CollectiveSpec] | Callable[[int, int], CollectiveSpec] = field(
        default_factory=dict
    )

    def collective(self, index: int, n: int) -> CollectiveSpec:
        if callable(self.collectives):
            return self.collectives(index, n)
        return self.collectives.get(index, PlainBarrier())


@dataclass(frozen=True)
class SpecError:
    kind: str
    n: int
    detail: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"[{self.severity}] {self.kind} (N={self.n}): {self.detail}"


def spec_errors(errors: Iterable[SpecError]) -> list[SpecError]:
    return [e for e in errors if e.severity == "error"]


def validate_topology(spec: TopologySpec, n_range: Iterable[int]) -> list[SpecError]:
    """Check barrier-tag ordering, the tag-gap limit and rank ranges.

    Self-sends are reported as warnings.  An empty list of errors (warnings
    allowed, see :func:`spec_errors`) means the spec is usable.
    """
    out: list[SpecError] = []
    for n in n_range:
        try:
            count = spec.barrier_count(n)
        except Exception as exc:  # user functions are arbitrary code
            out.append(SpecError("EvalFailed", n, f"barrier_count: {exc!r}"))
            continue
        if not isinstance(count, int) or count < 0:
            out.append(SpecError("BadBarrierCount", n, f"barrier_count = {count!r}"))
            continue
        try:
            tags = [spec.barrier_tag(b, n) for b in range(count + 1)]
        except Exception as exc:
            out.append(SpecError("EvalFailed", n, f"barrier_tag: {exc!r}"))
            continue
        if tags[0] != 0:
            out.append(SpecError("BarrierTagNotZero", n, f"barrier_tag(0) = {tags[0]}"))
        for b in range(count):
            gap = tags[b + 1] - tags[b]
            if gap < 0:
                out.append(
                    SpecError("BarrierTagDecreasing", n, f"barrier_tag({b + 1}) < barrier_tag({b})")
                )
            if gap > TAG_GAP_LIMIT:
                out.append(
                    SpecError(
                        "TagGapExceeded",
                        n,
                        f"barrier_tag({b + 1}) - barrier_tag({b}) = {gap} > {TAG_GAP_LIMIT}",
                    )
                )
        sender, receiver = spec.sender, spec.receiver
        for v in range(max(tags)):
            try:
                s, r = sender(v, n), receiver(v, n)
            except Exception as exc:
                out.append(SpecError("EvalFailed", n, f"sender/receiver({v}): {exc!r}"))
                continue
            if type(s) is int and type(r) is int and 0 <= s < n and 0 <= r < n and s != r:
                continue
            for role, who in (("sender", s), ("receiver", r)):
                if not isinstance(who, int) or not 0 <= who < n:
                    out.append(SpecError("RankOutOfRange", n, f"{role}({v}) = {who!r}"))
            if s == r:
                out.append(SpecError("SelfSend", n, f"sender({v}) = receiver({v}) = {s}", "warning"))
        if not callable(spec.collectives):
            for index, coll in spec.collectives.items():
                if not 0 <= index < count:
                    out.append(SpecError("CollectiveIndex", n, f"collective {index} not in [0, {count})"))
                if isinstance(coll, Gather):
                    if not 0 <= coll.root < n:
                        out.append(SpecError("RankOutOfRange", n, f"gather {index} root = {coll.root}"))
                    for r in range(n):
                        if coll.segment_len(r, n) <= 0:
                            out.append(SpecError("SegmentLength", n, f"gather {index} rank {r}"))
    return out
