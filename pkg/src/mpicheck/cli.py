"""Command-line entry point: ``mpicheck explore|run|bench|trace``.

Exit codes: 0 when everything checks out, 1 for a negative verdict
(deadlock, violation, exhausted bound, failed equivalence or an invalid
trace), 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .benchmarks.layout import ConfigError
from .benchmarks.runner import BENCHMARKS, run_benchmark
from .calculus import GlobalState, initial_state, spec_errors, validate_topology
from .explorer import (
    DEFAULT_MAX_STATES,
    ExploreBounds,
    FreeBufferPolicy,
    Ok,
    StateGraph,
    explore,
    run_schedule,
)
from .monitor import check_state
from .programs import ProgramFormatError, cmd_from_json, spec_from_json
from .runtime.workers import DEFAULT_EAGER_BYTES
from .semantics import ReplayError, Transition, format_state, is_deadlock, is_terminated, progress_transitions, replay

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- input documents ----------------------------------------------------------


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None


def _load_inputs(program_file: str, spec_file: str | None, n: int | None):
    """Program, spec and process count from one document or two files.

    A program file may be a bare command or a document with ``program`` and
    optionally ``spec`` and ``n`` keys; the same holds for the spec file.
    """
    pdoc = _read_json(program_file)
    sdoc = _read_json(spec_file) if spec_file else pdoc
    try:
        program = cmd_from_json(pdoc["program"] if isinstance(pdoc, dict) and "program" in pdoc else pdoc)
        if isinstance(sdoc, dict) and "spec" in sdoc:
            sdoc = sdoc["spec"]
        elif sdoc is pdoc:
            raise UsageError(f"{program_file}: no spec given and the document has no 'spec' key")
        spec = spec_from_json(sdoc)
    except (ProgramFormatError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot parse input: {exc}") from None
    if n is None:
        n = pdoc.get("n", 2) if isinstance(pdoc, dict) else 2
    if not isinstance(n, int) or n < 1:
        raise UsageError(f"invalid process count {n!r}")
    errors = spec_errors(validate_topology(spec, [n]))
    if errors:
        raise UsageError("spec rejected: " + "; ".join(str(e) for e in errors))
    return program, spec, n


def _max_states(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("MPICHECK_MAX_STATES")
    if env is None:
        return DEFAULT_MAX_STATES
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MPICHECK_MAX_STATES={env!r} is not an integer") from None


def _bounds(args) -> ExploreBounds:
    try:
        return ExploreBounds(
            max_states=_max_states(args.max_states),
            max_depth=args.max_depth,
            free_buffer_policy=FreeBufferPolicy(args.free_buffer),
            compress_local=args.compress,
            reduce_posts=args.reduce,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _jsonable(v: Any) -> Any:
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def _envs(S: GlobalState) -> list[dict[str, Any]]:
    return [_jsonable(dict(p.env)) for p in S.procs]


def _emit(obj: dict[str, Any], fmt: str, text: str) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True) if fmt == "json" else text)


# -- subcommands --------------------------------------------------------------


def cmd_explore(args) -> int:
    program, spec, n = _load_inputs(args.program, args.spec, args.n)
    bounds = _bounds(args)
    graph = StateGraph() if args.dot else None
    verdict = explore(program, spec, n, bounds, monitor=args.monitor, graph=graph)
    if graph is not None:
        Path(args.dot).write_text(graph.to_dot() + "\n")
    out = verdict.to_json() | {"n": n}
    if isinstance(verdict, Ok):
        out["terminal_envs"] = [_envs(S) for S in verdict.terminals]
    text = f"{out['verdict']}: {verdict.states_visited} states"
    if "trace" in out:
        text += "\n" + "\n".join(str(Transition.from_json(t)) for t in out["trace"])
    for v in out.get("violations", []):
        text += f"\n{v['axiom']} at p{v['rank']}: {v['detail']}"
    _emit(out, args.format, text)
    return EXIT_OK if isinstance(verdict, Ok) else EXIT_NEGATIVE


def cmd_run(args) -> int:
    program, spec, n = _load_inputs(args.program, args.spec, args.n)
    trace, verdict = run_schedule(program, spec, n, args.seed, monitor=args.monitor, bounds=_bounds(args))
    final = trace.final()
    out = verdict.to_json() | {"n": n, "seed": args.seed, "trace": trace.to_json(), "final_envs": _envs(final)}
    out.pop("terminal_digests", None)
    text = "\n".join([f"{out['verdict']} after {len(trace.steps)} steps (seed {args.seed})"]
                     + [f"p{i}: {env}" for i, env in enumerate(out["final_envs"])])
    for v in out.get("violations", []):
        text += f"\n{v['axiom']} at p{v['rank']}: {v['detail']}"
    _emit(out, args.format, text)
    return EXIT_OK if isinstance(verdict, Ok) else EXIT_NEGATIVE


_CONFIG_FLAGS = ("nx", "ny", "nt", "iters", "tol", "dx", "dt", "c", "alpha", "cfl")


def _bench_config(name: str, args):
    cls = BENCHMARKS[name].config
    known = {f.name for f in dataclasses.fields(cls)}
    given = {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k) is not None}
    bad = sorted(set(given) - known)
    if bad:
        raise UsageError(f"{name} does not take --{', --'.join(bad)}")
    return cls(**given)


def cmd_bench(args) -> int:
    cfg = _bench_config(args.benchmark, args)
    try:
        cfg.validate(args.n)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    res = run_benchmark(args.benchmark, cfg, args.n, mode=args.mode, seed=args.seed,
                        monitor=args.monitor, eager_bytes=args.eager_bytes)
    if args.csv and res.root_output is not None:
        grid = res.root_output[0] if isinstance(res.root_output, tuple) else res.root_output
        np.savetxt(args.csv, np.atleast_2d(grid), delimiter=",", fmt="%.17g")
    out = res.to_json() | {"config": dataclasses.asdict(cfg)}
    lines = [f"{args.benchmark} n={args.n} mode={args.mode}: {res.verdict}"]
    for key, r in res.reports.items():
        lines.append(f"  {key}: {r.mode} {'pass' if r.passed else 'FAIL'} "
                     f"(max abs {r.max_abs_deviation:.3g}, max rel {r.max_rel_deviation:.3g})")
    _emit(out, args.format, "\n".join(lines))
    if res.verdict != "ok":
        return EXIT_NEGATIVE
    if args.check and not res.equivalent:
        return EXIT_NEGATIVE
    return EXIT_OK


def _edges(items: list) -> list[list[Transition]]:
    """A trace is a list of edges; an edge is one transition or a list of them."""
    return [[Transition.from_json(t) for t in item] if isinstance(item, list) else [Transition.from_json(item)]
            for item in items]


def cmd_trace(args) -> int:
    tdoc = _read_json(args.trace)
    if args.program:
        program_file = args.program
    elif isinstance(tdoc, dict) and "program" in tdoc:
        program_file = args.trace
    elif args.spec:
        program_file = args.spec
    else:
        raise UsageError("no program: pass --program or a document holding one")
    program, spec, n = _load_inputs(program_file, args.spec, args.n)
    if isinstance(tdoc, dict):
        prefix = tdoc.get("prefix", [])
        items = tdoc.get("steps", tdoc.get("trace"))
    else:
        prefix, items = [], tdoc
    try:
        prefix_steps = [t for e in _edges(prefix) for t in e]
        edges = _edges(items or [])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.trace}: malformed trace: {exc}") from None

    S = initial_state(program, n)
    try:
        S = replay(S, prefix_steps, spec)[-1]
    except ReplayError as exc:
        print(f"invalid trace: prefix {exc}")
        return EXIT_NEGATIVE
    print(format_state(S, "State 0"))
    done = 0
    for k, edge in enumerate(edges):
        label = " ".join(str(t) for t in edge)
        try:
            S = replay(S, edge, spec)[-1]
        except ReplayError as exc:
            print(f"invalid trace: edge {k} ({label}), {exc}")
            return EXIT_NEGATIVE
        done += len(edge)
        print(f"   | {label}\n   v")
        print(format_state(S, f"State {k + 1}"))
    if is_terminated(S):
        status = "terminated"
    elif is_deadlock(S, spec):
        status = "deadlock"
    elif not progress_transitions(S, spec):
        # nothing can fire, but some process is blocked outside a wait or barrier
        status = "stuck"
    else:
        status = "running"
    print(f"replayed {done} steps; final state: {status}")
    for v in check_state(S, spec, done):
        print(f"{v.axiom} at p{v.rank}: {v.detail}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _explore_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("program", help="program JSON (may also hold 'spec' and 'n')")
    p.add_argument("spec", nargs="?", help="topology spec JSON (default: the program document's 'spec')")
    p.add_argument("--n", type=int, help="number of processes (default: document 'n' or 2)")
    p.add_argument("--max-states", type=int, help=f"state bound (env MPICHECK_MAX_STATES, default {DEFAULT_MAX_STATES})")
    p.add_argument("--max-depth", type=int, default=1_000_000)
    p.add_argument("--monitor", action=argparse.BooleanOptionalAction, default=True, help="check the axioms")
    p.add_argument("--free-buffer", choices=[p.value for p in FreeBufferPolicy], default="eager")
    p.add_argument("--compress", action=argparse.BooleanOptionalAction, default=True,
                   help="fold runs of local steps into one edge")
    p.add_argument("--reduce", action="store_true", help="expand only the first enabled post (monitor on)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpicheck", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["json", "text"], default="json")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", parents=[common], help="exhaustive exploration of every schedule")
    _explore_flags(p)
    p.add_argument("--dot", metavar="FILE", help="write the explored state graph in DOT format")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("run", parents=[common], help="one seeded random schedule")
    _explore_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="run a benchmark and compare with its sequential solver")
    p.add_argument("benchmark", choices=sorted(BENCHMARKS))
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--mode", choices=["sim", "workers"], default="sim")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eager-bytes", type=int, default=DEFAULT_EAGER_BYTES)
    p.add_argument("--monitor", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--check", action="store_true", help="exit 1 when the outputs are not equivalent")
    p.add_argument("--csv", metavar="FILE", help="write the root solution as CSV")
    for flag in ("nx", "ny", "nt", "iters"):
        p.add_argument(f"--{flag}", type=int)
    for flag in ("tol", "dx", "dt", "c", "alpha", "cfl"):
        p.add_argument(f"--{flag}", type=float)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace", parents=[common], help="replay a trace and print every state")
    p.add_argument("trace", help="trace JSON: a list of steps, or a document with 'steps' or 'trace'")
    p.add_argument("spec", nargs="?", help="document with the spec (and program, unless --program)")
    p.add_argument("--program", help="program JSON")
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    # argparse itself exits with status 2 on bad flags
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mpicheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
