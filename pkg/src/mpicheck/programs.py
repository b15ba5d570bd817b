"""JSON encoding of programs and topology specs.

Expressions: an integer is a literal, a string is a variable, and compound
forms are one-key objects ``{"eq": [a, b]}``, ``{"add": [a, b]}``,
``{"neg": a}``, ``{"mul": [a, b]}``, ``{"div": [a, b]}``.

Commands are one-key objects (or the bare strings ``"skip"``/``"barrier"``)::

    {"irecv": {"tag": e, "dst": "x"}}     {"isend": {"tag": e, "src": "x"}}
    {"wait": e}                           {"set": {"var": "x", "expr": e}}
    {"if": {"cond": e, "then": c, "else": c}}
    {"while": {"cond": e, "body": c}}     {"seq": [c, c, ...]}

A spec document gives the five topology functions as expressions.  ``sender``,
``receiver`` and ``message`` see ``tag`` and ``size``; ``barrier_tag`` sees
``index`` and ``size``; ``barrier_count`` sees ``size``.  ``collectives`` is a
list of ``[index, kind, params]`` with kind ``barrier``, ``gather`` or
``allreduce``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .calculus import (
    SKIP,
    Add,
    AllReduce,
    Barrier,
    Command,
    Div,
    Eq,
    Expr,
    Gather,
    If,
    IntLit,
    IRecv,
    ISend,
    Mul,
    Neg,
    PlainBarrier,
    ReduceOp,
    Seq,
    Set,
    Skip,
    TopologySpec,
    Var,
    Wait,
    While,
    eval_expr,
    seq,
)

INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1


class ProgramFormatError(ValueError):
    pass


_BINARY = {"eq": Eq, "add": Add, "mul": Mul, "div": Div}
_BINARY_NAMES = {v: k for k, v in _BINARY.items()}


def expr_from_json(obj: Any) -> Expr:
    if isinstance(obj, bool):
        raise ProgramFormatError(f"booleans are not expressions: {obj!r}")
    if isinstance(obj, int):
        if not INT64_MIN <= obj <= INT64_MAX:
            raise ProgramFormatError(f"integer literal out of 64-bit range: {obj}")
        return IntLit(obj)
    if isinstance(obj, str):
        if not obj.isascii() or not obj:
            raise ProgramFormatError(f"bad identifier {obj!r}")
        return Var(obj)
    if isinstance(obj, dict) and len(obj) == 1:
        (key, arg), = obj.items()
        if key in _BINARY:
            if not isinstance(arg, list) or len(arg) != 2:
                raise ProgramFormatError(f"{key} takes two operands")
            return _BINARY[key](expr_from_json(arg[0]), expr_from_json(arg[1]))
        if key == "neg":
            return Neg(expr_from_json(arg))
    raise ProgramFormatError(f"not an expression: {obj!r}")


def expr_to_json(e: Expr) -> Any:
    match e:
        case IntLit(n):
            return n
        case Var(name):
            return name
        case Neg(inner):
            return {"neg": expr_to_json(inner)}
    return {_BINARY_NAMES[type(e)]: [expr_to_json(e.lhs), expr_to_json(e.rhs)]}


def _ident(obj: Any, what: str) -> str:
    if not isinstance(obj, str) or not obj or not obj.isascii():
        raise ProgramFormatError(f"{what} must be a non-empty ASCII identifier, got {obj!r}")
    return obj


def cmd_from_json(obj: Any) -> Command:
    if obj == "skip":
        return SKIP
    if obj == "barrier":
        return Barrier()
    if isinstance(obj, list):
        return seq(*(cmd_from_json(c) for c in obj))
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ProgramFormatError(f"not a command: {obj!r}")
    (key, arg), = obj.items()
    try:
        match key:
            case "skip":
                return SKIP
            case "barrier":
                return Barrier()
            case "irecv":
                return IRecv(expr_from_json(arg["tag"]), _ident(arg["dst"], "irecv dst"))
            case "isend":
                return ISend(expr_from_json(arg["tag"]), _ident(arg["src"], "isend src"))
            case "wait":
                return Wait(expr_from_json(arg))
            case "set":
                return Set(_ident(arg["var"], "set var"), expr_from_json(arg["expr"]))
            case "if":
                return If(
                    expr_from_json(arg["cond"]),
                    cmd_from_json(arg["then"]),
                    cmd_from_json(arg.get("else", "skip")),
                )
            case "while":
                return While(expr_from_json(arg["cond"]), cmd_from_json(arg["body"]))
            case "seq":
                if not isinstance(arg, list):
                    raise ProgramFormatError("seq takes a list")
                return seq(*(cmd_from_json(c) for c in arg))
    except (KeyError, TypeError) as exc:
        raise ProgramFormatError(f"malformed {key}: {obj!r}") from exc
    raise ProgramFormatError(f"unknown command {key!r}")


def cmd_to_json(c: Command) -> Any:
    match c:
        case Skip():
            return "skip"
        case Barrier():
            return "barrier"
        case IRecv(tag, x):
            return {"irecv": {"tag": expr_to_json(tag), "dst": x}}
        case ISend(tag, x):
            return {"isend": {"tag": expr_to_json(tag), "src": x}}
        case Wait(tag):
            return {"wait": expr_to_json(tag)}
        case Set(x, e):
            return {"set": {"var": x, "expr": expr_to_json(e)}}
        case If(cond, a, b):
            return {"if": {"cond": expr_to_json(cond), "then": cmd_to_json(a), "else": cmd_to_json(b)}}
        case While(cond, body):
            return {"while": {"cond": expr_to_json(cond), "body": cmd_to_json(body)}}
        case Seq():
            items = []
            while isinstance(c, Seq):
                items.append(cmd_to_json(c.first))
                c = c.rest
            items.append(cmd_to_json(c))
            return {"seq": items}
    raise ProgramFormatError(f"not a command: {c!r}")


class _ExprFn:
    """A topology function given as an expression over named parameters."""

    def __init__(self, expr: Expr, params: tuple[str, ...]):
        self.expr = expr
        self.params = params

    def __call__(self, *args: int) -> int:
        return eval_expr(self.expr, dict(zip(self.params, args)))


def spec_from_json(obj: Any) -> TopologySpec:
    if not isinstance(obj, dict):
        raise ProgramFormatError("spec must be an object")
    try:
        sender = _ExprFn(expr_from_json(obj["sender"]), ("tag", "size"))
        receiver = _ExprFn(expr_from_json(obj["receiver"]), ("tag", "size"))
        message = _ExprFn(expr_from_json(obj["message"]), ("tag", "size"))
        barrier_tag = _ExprFn(expr_from_json(obj["barrier_tag"]), ("index", "size"))
        barrier_count = _ExprFn(expr_from_json(obj["barrier_count"]), ("size",))
    except KeyError as exc:
        raise ProgramFormatError(f"spec is missing {exc.args[0]!r}") from None
    collectives: dict[int, Any] = {}
    for entry in obj.get("collectives", []):
        if not isinstance(entry, list) or len(entry) not in (2, 3):
            raise ProgramFormatError(f"bad collective entry {entry!r}")
        index, kind = entry[0], entry[1]
        params = entry[2] if len(entry) == 3 else {}
        if kind == "barrier":
            collectives[index] = PlainBarrier()
        elif kind == "gather":
            seg = _ExprFn(expr_from_json(params.get("segment_len", 1)), ("rank", "size"))
            collectives[index] = Gather(params.get("root", 0), seg)
        elif kind == "allreduce":
            try:
                op = ReduceOp(params.get("op", "sum"))
            except ValueError:
                raise ProgramFormatError(f"unknown reduction {params.get('op')!r}") from None
            collectives[index] = AllReduce(op)
        else:
            raise ProgramFormatError(f"unknown collective kind {kind!r}")
    return TopologySpec(sender, receiver, message, barrier_tag, barrier_count, collectives)


def spec_to_json(spec: TopologySpec) -> dict[str, Any]:
    """Inverse of :func:`spec_from_json` for expression-defined specs."""
    fns = {}
    for name in ("sender", "receiver", "message", "barrier_tag", "barrier_count"):
        fn = getattr(spec, name)
        if not isinstance(fn, _ExprFn):
            raise ProgramFormatError(f"{name} is not expression-defined")
        fns[name] = expr_to_json(fn.expr)
    colls = []
    for index, c in sorted(spec.collectives.items()):
        if isinstance(c, PlainBarrier):
            colls.append([index, "barrier"])
        elif isinstance(c, Gather):
            colls.append([index, "gather", {"root": c.root, "segment_len": expr_to_json(c.segment_len.expr)}])
        else:
            colls.append([index, "allreduce", {"op": c.op.value}])
    if colls:
        fns["collectives"] = colls
    return fns


def _read(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ProgramFormatError(f"{path}: invalid JSON: {exc}") from None


def load_program(path: str | Path) -> Command:
    doc = _read(path)
    if isinstance(doc, dict) and "program" in doc:
        doc = doc["program"]
    return cmd_from_json(doc)


def load_spec(path: str | Path) -> TopologySpec:
    doc = _read(path)
    if isinstance(doc, dict) and "spec" in doc:
        doc = doc["spec"]
    return spec_from_json(doc)


def dump_document(program: Command, spec: TopologySpec | None = None) -> str:
    doc: dict[str, Any] = {"program": cmd_to_json(program)}
    if spec is not None:
        doc["spec"] = spec_to_json(spec)
    return json.dumps(doc, indent=2)
