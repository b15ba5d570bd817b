"""Small programs, each breaking at least one axiom, and the example program
they are derived from.

Every mutant records which axiom the monitor must report and whether a
deadlock is reachable once the monitor is switched off.  The JSON corpus
shipped with the package is generated from these definitions
(:func:`write_corpus`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .calculus import BARRIER, SKIP, Command, Eq, If, IntLit, IRecv, ISend, Set, TopologySpec, Var, Wait, initial_state, seq
from .programs import cmd_to_json, spec_from_json, spec_to_json
from .semantics import Rule, Transition, local_rule

CORPUS_DIR = Path(__file__).parent / "corpus"


def _rank_is(r: int):
    return Eq(Var("rank"), IntLit(r))


def _two_ranks(c0: Command, c1: Command) -> Command:
    return If(_rank_is(0), c0, c1)


# -- specs --------------------------------------------------------------------

# one barrier interval [0, 1): every tag goes from rank 0 to rank 1 with payload 5
EXAMPLE_SPEC_JSON = {
    "sender": 0,
    "receiver": 1,
    "message": 5,
    "barrier_tag": {"add": [1, {"neg": {"eq": ["index", 0]}}]},
    "barrier_count": 1,
}

_TAG_PARITY = {"add": ["tag", {"neg": {"mul": [{"div": ["tag", 2]}, 2]}}]}

# tags 0 and 1 in one interval: even tags go 0 -> 1 with 5, odd tags 1 -> 0 with 7
PAIR_SPEC_JSON = {
    "sender": _TAG_PARITY,
    "receiver": {"add": [1, {"neg": _TAG_PARITY}]},
    "message": {"add": [5, {"mul": [2, _TAG_PARITY]}]},
    "barrier_tag": {"mul": [2, {"add": [1, {"neg": {"eq": ["index", 0]}}]}]},
    "barrier_count": 1,
}


def example_spec() -> TopologySpec:
    return spec_from_json(EXAMPLE_SPEC_JSON)


def pair_spec() -> TopologySpec:
    return spec_from_json(PAIR_SPEC_JSON)


def example_program(tag: int = 0, value: int = 5) -> Command:
    """``set x 5; if rank = 0 {isend t x} {irecv t x}; wait t``."""
    t = IntLit(tag)
    return seq(Set("x", IntLit(value)), _two_ranks(ISend(t, "x"), IRecv(t, "x")), Wait(t))


# -- mutants ------------------------------------------------------------------


@dataclass(frozen=True)
class Mutant:
    name: str
    description: str
    program: Command
    spec_json: dict
    axiom: str  # the axiom the monitor must report
    deadlocks: bool  # a deadlock is reachable with the monitor off
    n: int = 2

    @property
    def spec(self) -> TopologySpec:
        return spec_from_json(self.spec_json)

    def document(self) -> dict:
        return {
            "program": cmd_to_json(self.program),
            "spec": spec_to_json(self.spec),
            "n": self.n,
            "expect": {"axiom": self.axiom, "deadlock": self.deadlocks},
            "description": self.description,
        }


def _mutants() -> list[Mutant]:
    t0, t1 = IntLit(0), IntLit(1)
    return [
        Mutant(
            "send_cycle",
            "both ranks complete a send before receiving; rank 1 waits on its own "
            "send first and so skips the message addressed to it",
            _two_ranks(
                seq(Set("x", IntLit(5)), ISend(t0, "x"), Wait(t0), IRecv(t1, "y"), Wait(t1)),
                seq(Set("x", IntLit(7)), ISend(t1, "x"), Wait(t1), IRecv(t0, "y"), Wait(t0)),
            ),
            PAIR_SPEC_JSON,
            "AtWait",
            True,
        ),
        Mutant(
            "extra_barrier",
            "rank 0 calls one barrier more than the spec allows",
            _two_ranks(BARRIER, SKIP),
            EXAMPLE_SPEC_JSON | {"barrier_tag": 0},
            "AtBarrier",
            True,
        ),
        Mutant(
            "wait_without_irecv",
            "rank 1 waits for a message it never asked to receive",
            _two_ranks(seq(Set("x", IntLit(5)), ISend(t0, "x"), Wait(t0)), Wait(t0)),
            EXAMPLE_SPEC_JSON,
            "AtWait",
            True,
        ),
        Mutant(
            "swapped_roles",
            "the ranks trade places: rank 1 sends the tag that belongs to rank 0",
            seq(Set("x", IntLit(5)), _two_ranks(IRecv(t0, "x"), ISend(t0, "x")), Wait(t0)),
            EXAMPLE_SPEC_JSON,
            "AtRecv",
            False,
        ),
        Mutant(
            "receive_only",
            "both ranks wait for the other to send and neither does",
            _two_ranks(seq(IRecv(t1, "y"), Wait(t1)), seq(IRecv(t0, "y"), Wait(t0))),
            PAIR_SPEC_JSON,
            "AtWait",
            True,
        ),
        Mutant(
            "wrong_payload",
            "rank 0 sends 6 where the spec says 5",
            example_program(value=6),
            EXAMPLE_SPEC_JSON,
            "AtSend",
            False,
        ),
        Mutant(
            "overwrite_pending_recv",
            "rank 1 assigns to its receive buffer before waiting on it",
            _two_ranks(
                seq(Set("x", IntLit(5)), ISend(t0, "x"), Wait(t0)),
                seq(IRecv(t0, "x"), Set("x", IntLit(3)), Wait(t0)),
            ),
            EXAMPLE_SPEC_JSON,
            "AtSet",
            False,
        ),
        Mutant(
            "read_pending_recv",
            "rank 1 reads its receive buffer before waiting on it; the read can "
            "never be evaluated, so rank 1 is stuck",
            _two_ranks(
                seq(Set("x", IntLit(5)), ISend(t0, "x"), Wait(t0)),
                seq(IRecv(t0, "x"), Set("y", Var("x")), Wait(t0)),
            ),
            EXAMPLE_SPEC_JSON,
            "AtRead",
            True,
        ),
        Mutant(
            "barrier_with_pending_send",
            "rank 0 never waits on its send before the final barrier",
            _two_ranks(seq(Set("x", IntLit(5)), ISend(t0, "x")), seq(IRecv(t0, "x"), Wait(t0))),
            EXAMPLE_SPEC_JSON,
            "AtBarrier",
            False,
        ),
    ]


MUTANTS: dict[str, Mutant] = {m.name: m for m in _mutants()}


def example_document() -> dict:
    return {
        "program": cmd_to_json(example_program()),
        "spec": EXAMPLE_SPEC_JSON,
        "n": 2,
        "description": "one message from rank 0 to rank 1, non-blocking on both sides",
    }


def example_prefix(n: int = 2) -> list[Transition]:
    """Local steps taking every rank of the example to its first post."""
    out = []
    for p in initial_state(example_program(), n).procs:
        while (step := local_rule(p)) is not None:
            p, rule = step
            out.append(Transition(rule, p.rank))
    return out


def _t(rule: Rule, rank: int | None = None, tag: int | None = None) -> Transition:
    return Transition(rule, rank, tag)


# the two schedules of the example drawn as rows of state boxes; an inner
# list is one edge made of several steps
EXAMPLE_ROWS: dict[str, list[list[Transition]]] = {
    "top": [
        [_t(Rule.SEND, 0, 0)],
        [_t(Rule.TRANSFER_NO_WAIT, None, 0)],
        [_t(Rule.SEQ_SKIP, 0), _t(Rule.WAIT_SEND, 0, 0)],
        [_t(Rule.RECV, 1, 0), _t(Rule.SEQ_SKIP, 1)],
        [_t(Rule.WAIT_RECV, 1, 0)],
    ],
    "bottom": [
        [_t(Rule.RECV, 1, 0)],
        [_t(Rule.SEND, 0, 0), _t(Rule.SEQ_SKIP, 0)],
        [_t(Rule.SEQ_SKIP, 1), _t(Rule.TRANSFER_ON_WAIT, None, 0)],
        [_t(Rule.WAIT_RECV, 1, 0)],
        [_t(Rule.WAIT_SEND, 0, 0)],
    ],
}


def example_trace_document(row: str) -> dict:
    return {
        "program": cmd_to_json(example_program()),
        "spec": EXAMPLE_SPEC_JSON,
        "n": 2,
        "prefix": [t.to_json() for t in example_prefix()],
        "steps": [[t.to_json() for t in edge] for edge in EXAMPLE_ROWS[row]],
    }


def corpus_documents() -> dict[str, dict]:
    docs = {"fig5.json": example_document()}
    for row in EXAMPLE_ROWS:
        docs[f"fig5_{row}_row_trace.json"] = example_trace_document(row)
    for m in MUTANTS.values():
        docs[f"mutant_{m.name}.json"] = m.document()
    # the canonical deadlocking mutant under a stable name
    docs["deadlock_mutant.json"] = MUTANTS["send_cycle"].document()
    return docs


def write_corpus(directory: Path = CORPUS_DIR) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, doc in corpus_documents().items():
        path = directory / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        out.append(path)
    return out
